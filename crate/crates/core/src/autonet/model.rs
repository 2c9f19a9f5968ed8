use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layer::{Conv2d, Gradients, Layer, LayerSpec, Network, PyramidPool, Tape};
use crate::encoding::ModelInput;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Architecture of the segmenter: strided stem, dilated deep stage, optional
/// pyramid-pooling context module, 3x3 head, 1x1 classifier, bilinear
/// upsampling back to the input size and a sigmoid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmenterConfig {
    pub input_channels: usize,
    /// One stride-2 3x3 convolution per entry.
    pub stem_widths: Vec<usize>,
    /// Dilation rates of the 3x3 convolutions of the deep stage.
    pub dilations: Vec<usize>,
    /// Pooling grids of the context module; empty disables it.
    pub pyramid_grids: Vec<usize>,
    pub branch_width: usize,
    pub head_width: usize,
    pub seed: u64,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        SegmenterConfig {
            input_channels: 4,
            stem_widths: vec![16, 32],
            dilations: vec![2, 4],
            pyramid_grids: vec![1, 2, 3, 6],
            branch_width: 8,
            head_width: 32,
            seed: 0,
        }
    }
}

impl SegmenterConfig {
    pub fn downsample_factor(&self) -> usize {
        1 << self.stem_widths.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if self.input_channels == 0 || self.stem_widths.is_empty() {
            return bad("segmenter needs input channels and at least one stem stage".into());
        }
        if self.stem_widths.iter().any(|&w| w == 0) || self.head_width == 0 {
            return bad("layer widths must be positive".into());
        }
        if self.dilations.iter().any(|&d| d == 0) {
            return bad("dilation rates must be at least 1".into());
        }
        if self.pyramid_grids.windows(2).any(|w| w[0] >= w[1]) || self.pyramid_grids.contains(&0) {
            return bad(format!(
                "pyramid grids {:?} must be positive and strictly increasing",
                self.pyramid_grids
            ));
        }
        if !self.pyramid_grids.is_empty() && self.branch_width == 0 {
            return bad("pyramid branch width must be positive".into());
        }
        Ok(())
    }

    fn build(&self) -> Result<Network> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut layers = Vec::new();
        let mut c = self.input_channels;
        for &w in &self.stem_widths {
            layers.push(Layer::Conv(Conv2d::he(c, w, 3, 2, 1, &mut rng)));
            layers.push(Layer::Relu);
            c = w;
        }
        for &d in &self.dilations {
            layers.push(Layer::Conv(Conv2d::he(c, c, 3, 1, d, &mut rng)));
            layers.push(Layer::Relu);
        }
        if !self.pyramid_grids.is_empty() {
            let branches = self
                .pyramid_grids
                .iter()
                .map(|_| Conv2d::he(c, self.branch_width, 1, 1, 1, &mut rng))
                .collect();
            let p = PyramidPool {
                grids: self.pyramid_grids.clone(),
                branches,
            };
            c = p.output_channels(c);
            layers.push(Layer::PyramidPool(p));
            layers.push(Layer::Relu);
        }
        layers.push(Layer::Conv(Conv2d::he(
            c,
            self.head_width,
            3,
            1,
            1,
            &mut rng,
        )));
        layers.push(Layer::Relu);
        layers.push(Layer::Conv(Conv2d::he(
            self.head_width,
            1,
            1,
            1,
            1,
            &mut rng,
        )));
        layers.push(Layer::UpsampleBilinear {
            factor: self.downsample_factor(),
        });
        layers.push(Layer::Sigmoid);
        Ok(Network::new(layers))
    }
}

/// The trainable segmenter. Frozen models refuse parameter mutation and are
/// safe to share across threads for inference.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmenterModel {
    config: SegmenterConfig,
    net: Network,
    frozen: bool,
}

/// Fresh model with He-initialized weights drawn from `seed`.
pub fn init_weights(config: &SegmenterConfig, seed: u64) -> Result<SegmenterModel> {
    let config = SegmenterConfig {
        seed,
        ..config.clone()
    };
    let net = config.build()?;
    Ok(SegmenterModel {
        config,
        net,
        frozen: false,
    })
}

impl SegmenterModel {
    pub fn new(config: &SegmenterConfig) -> Result<Self> {
        init_weights(config, config.seed)
    }

    /// Rebuild from a config and parameter tensors in declaration order.
    pub fn from_parts(config: SegmenterConfig, params: Vec<Tensor>) -> Result<Self> {
        let mut model = init_weights(&config, config.seed)?;
        let mut slots = model.net.params_mut();
        if slots.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "architecture has {} parameter tensors, checkpoint {}",
                slots.len(),
                params.len()
            )));
        }
        for (i, (slot, p)) in slots.iter_mut().zip(params).enumerate() {
            if slot.shape() != p.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} has shape {:?}, checkpoint {:?}",
                    i,
                    slot.shape(),
                    p.shape()
                )));
            }
            **slot = p;
        }
        Ok(model)
    }

    pub fn config(&self) -> &SegmenterConfig {
        &self.config
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        self.net.specs()
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> Result<Vec<&mut Tensor>> {
        if self.frozen {
            return Err(Error::Frozen);
        }
        Ok(self.net.params_mut())
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(mut self) -> Self {
        self.frozen = true;
        self
    }

    /// Mutable copy for continued training.
    pub fn thawed(&self) -> Self {
        SegmenterModel {
            frozen: false,
            ..self.clone()
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (c, h, w) = x.dims3()?;
        if c != self.config.input_channels {
            return Err(Error::Shape(format!(
                "model expects {} input channels, got {}",
                self.config.input_channels, c
            )));
        }
        let f = self.config.downsample_factor();
        if h % f != 0 || w % f != 0 {
            return Err(Error::Shape(format!(
                "input {}x{} is not divisible by the downsample factor {}",
                h, w, f
            )));
        }
        Ok(())
    }

    /// Probability map `[1,R,R]`.
    pub fn forward(&self, input: &ModelInput) -> Result<Tensor> {
        self.check_input(input.tensor())?;
        self.net.forward(input.tensor())
    }

    pub fn forward_recorded(&self, input: &ModelInput, tape: &mut Tape) -> Result<Tensor> {
        self.check_input(input.tensor())?;
        self.net.forward_recorded(input.tensor(), tape)
    }

    /// Parameter gradients for an upstream gradient on the output map.
    pub fn backward(&self, tape: &Tape, upstream: &Tensor) -> Result<Gradients> {
        Ok(self.net.backward(tape, upstream)?.0)
    }
}
