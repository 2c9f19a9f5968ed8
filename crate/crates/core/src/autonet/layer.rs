//! Layers, the sequential network and its reverse-mode pass.
//!
//! `Network::forward_recorded` fills a [`Tape`] with whatever each layer needs
//! for its vector-Jacobian product; `Network::backward` walks the tape in
//! reverse and returns the gradient of every parameter (declaration order)
//! plus the gradient with respect to the input.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ops::{self, ConvGeom};
use crate::error::{Error, Result};
use crate::raster::{resize_bilinear, resize_bilinear_adjoint};
use crate::tensor::Tensor;

/// 'Same'-padded 2D convolution, optionally strided or dilated.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    /// `[C_out, C_in, k, k]`
    pub weight: Tensor,
    /// `[C_out]`
    pub bias: Tensor,
    pub stride: usize,
    pub dilation: usize,
}

impl Conv2d {
    pub fn zeros(cin: usize, cout: usize, k: usize, stride: usize, dilation: usize) -> Self {
        Conv2d {
            weight: Tensor::zeros(&[cout, cin, k, k]),
            bias: Tensor::zeros(&[cout]),
            stride,
            dilation,
        }
    }

    /// He-normal weights (`std = sqrt(2 / fan_in)`), zero bias.
    pub fn he<R: Rng + ?Sized>(
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        dilation: usize,
        rng: &mut R,
    ) -> Self {
        let mut c = Self::zeros(cin, cout, k, stride, dilation);
        let std = (2.0 / (cin * k * k) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        for v in c.weight.data_mut() {
            *v = normal.sample(rng);
        }
        c
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    fn geom(&self, x: &Tensor) -> Result<ConvGeom> {
        let (c, h, w) = x.dims3()?;
        if c != self.in_channels() {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {}",
                self.in_channels(),
                c
            )));
        }
        Ok(ConvGeom::new(
            c,
            h,
            w,
            self.kernel(),
            self.stride,
            self.dilation,
        ))
    }

    fn forward(&self, x: &Tensor) -> Result<(Tensor, Vec<f64>, ConvGeom)> {
        let g = self.geom(x)?;
        let col = ops::im2col(x.data(), &g);
        let out = ops::conv_apply(self.weight.data(), self.bias.data(), &col, &g);
        Ok((
            Tensor::from_vec(&[self.out_channels(), g.ho, g.wo], out)?,
            col,
            g,
        ))
    }

    fn backward(&self, col: &[f64], g: &ConvGeom, gy: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let (dw, db, dx) =
            ops::conv_adjoint(self.weight.data(), col, gy.data(), g, self.out_channels());
        Ok((
            Tensor::from_vec(self.weight.shape(), dw)?,
            Tensor::from_vec(self.bias.shape(), db)?,
            Tensor::from_vec(&[g.cin, g.h, g.w], dx)?,
        ))
    }
}

/// Multi-grid context module: for each grid `g`, adaptive average pooling to
/// `g x g`, a 1x1 projection and bilinear upsampling back to the input size;
/// the branch outputs are concatenated after the input channels.
#[derive(Clone, Debug, PartialEq)]
pub struct PyramidPool {
    pub grids: Vec<usize>,
    pub branches: Vec<Conv2d>,
}

impl PyramidPool {
    pub fn output_channels(&self, input: usize) -> usize {
        input
            + self
                .branches
                .iter()
                .map(Conv2d::out_channels)
                .sum::<usize>()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    AtrousConv,
    Relu,
    MaxPool,
    PyramidPool,
    UpsampleBilinear,
    Sigmoid,
}

/// Shape-level description of a layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dilation: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub in_channels: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_channels: Option<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub grids: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv(Conv2d),
    Relu,
    MaxPool { size: usize, stride: usize },
    PyramidPool(PyramidPool),
    UpsampleBilinear { factor: usize },
    Sigmoid,
}

impl Layer {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv(c) if c.dilation > 1 => "atrous_conv",
            Layer::Conv(_) => "conv",
            Layer::Relu => "relu",
            Layer::MaxPool { .. } => "maxpool",
            Layer::PyramidPool(_) => "pyramid_pool",
            Layer::UpsampleBilinear { .. } => "upsample_bilinear",
            Layer::Sigmoid => "sigmoid",
        }
    }

    pub fn spec(&self) -> LayerSpec {
        let blank = |kind| LayerSpec {
            kind,
            kernel: None,
            stride: None,
            dilation: None,
            in_channels: None,
            out_channels: None,
            grids: vec![],
        };
        match self {
            Layer::Conv(c) => LayerSpec {
                kernel: Some(c.kernel()),
                stride: Some(c.stride),
                dilation: Some(c.dilation),
                in_channels: Some(c.in_channels()),
                out_channels: Some(c.out_channels()),
                ..blank(if c.dilation > 1 {
                    LayerKind::AtrousConv
                } else {
                    LayerKind::Conv
                })
            },
            Layer::Relu => blank(LayerKind::Relu),
            Layer::MaxPool { size, stride } => LayerSpec {
                kernel: Some(*size),
                stride: Some(*stride),
                ..blank(LayerKind::MaxPool)
            },
            Layer::PyramidPool(p) => LayerSpec {
                out_channels: p.branches.first().map(Conv2d::out_channels),
                in_channels: p.branches.first().map(Conv2d::in_channels),
                grids: p.grids.clone(),
                ..blank(LayerKind::PyramidPool)
            },
            Layer::UpsampleBilinear { factor } => LayerSpec {
                stride: Some(*factor),
                ..blank(LayerKind::UpsampleBilinear)
            },
            Layer::Sigmoid => blank(LayerKind::Sigmoid),
        }
    }

    fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Conv(c) => vec![&c.weight, &c.bias],
            Layer::PyramidPool(p) => p
                .branches
                .iter()
                .flat_map(|c| [&c.weight, &c.bias])
                .collect(),
            _ => vec![],
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Conv(c) => vec![&mut c.weight, &mut c.bias],
            Layer::PyramidPool(p) => p
                .branches
                .iter_mut()
                .flat_map(|c| [&mut c.weight, &mut c.bias])
                .collect(),
            _ => vec![],
        }
    }

    fn forward(&self, x: &Tensor) -> Result<(Tensor, Record)> {
        match self {
            Layer::Conv(c) => {
                let (y, col, geom) = c.forward(x)?;
                Ok((y, Record::Conv { col, geom }))
            }
            Layer::Relu => {
                let y = x.map(|v| v.max(0.0));
                Ok((y.clone(), Record::Relu { out: y }))
            }
            Layer::Sigmoid => {
                let y = x.map(|v| 1.0 / (1.0 + (-v).exp()));
                Ok((y.clone(), Record::Sigmoid { out: y }))
            }
            Layer::MaxPool { size, stride } => {
                let (c, h, w) = x.dims3()?;
                if h < *size || w < *size {
                    return Err(Error::Shape(format!(
                        "{}x{} input is smaller than the {}x{} pool",
                        h, w, size, size
                    )));
                }
                let (out, argmax, ho, wo) = ops::max_pool(x.data(), c, h, w, *size, *stride);
                Ok((
                    Tensor::from_vec(&[c, ho, wo], out)?,
                    Record::MaxPool {
                        argmax,
                        in_shape: [c, h, w],
                    },
                ))
            }
            Layer::UpsampleBilinear { factor } => {
                let (_, h, w) = x.dims3()?;
                let y = resize_bilinear(x, h * factor, w * factor)?;
                Ok((y, Record::Upsample { in_h: h, in_w: w }))
            }
            Layer::PyramidPool(p) => {
                let (c, h, w) = x.dims3()?;
                let mut parts = vec![x.clone()];
                let mut pooled = Vec::with_capacity(p.grids.len());
                for (&grid, conv) in p.grids.iter().zip(&p.branches) {
                    let pool = Tensor::from_vec(
                        &[c, grid, grid],
                        ops::adaptive_avg_pool(x.data(), c, h, w, grid),
                    )?;
                    let (z, _, _) = conv.forward(&pool)?;
                    parts.push(resize_bilinear(&z, h, w)?);
                    pooled.push(pool);
                }
                let refs: Vec<&Tensor> = parts.iter().collect();
                Ok((
                    Tensor::concat_channels(&refs)?,
                    Record::Pyramid {
                        in_shape: [c, h, w],
                        pooled,
                    },
                ))
            }
        }
    }

    /// Returns (parameter gradients in `params()` order, input gradient).
    fn backward(&self, rec: &Record, gy: &Tensor) -> Result<(Vec<Tensor>, Tensor)> {
        match (self, rec) {
            (Layer::Conv(c), Record::Conv { col, geom }) => {
                let (dw, db, dx) = c.backward(col, geom, gy)?;
                Ok((vec![dw, db], dx))
            }
            (Layer::Relu, Record::Relu { out }) => {
                let mut dx = gy.clone();
                for (g, &y) in dx.data_mut().iter_mut().zip(out.data()) {
                    if y <= 0.0 {
                        *g = 0.0;
                    }
                }
                Ok((vec![], dx))
            }
            (Layer::Sigmoid, Record::Sigmoid { out }) => {
                let mut dx = gy.clone();
                for (g, &y) in dx.data_mut().iter_mut().zip(out.data()) {
                    *g *= y * (1.0 - y);
                }
                Ok((vec![], dx))
            }
            (Layer::MaxPool { .. }, Record::MaxPool { argmax, in_shape }) => {
                let mut dx = Tensor::zeros(in_shape);
                let d = dx.data_mut();
                for (&i, &g) in argmax.iter().zip(gy.data()) {
                    d[i] += g;
                }
                Ok((vec![], dx))
            }
            (Layer::UpsampleBilinear { .. }, Record::Upsample { in_h, in_w }) => {
                Ok((vec![], resize_bilinear_adjoint(gy, *in_h, *in_w)?))
            }
            (Layer::PyramidPool(p), Record::Pyramid { in_shape, pooled }) => {
                let [c, h, w] = *in_shape;
                let plane = h * w;
                let g = gy.data();
                let mut dx = g[..c * plane].to_vec();
                let mut grads = Vec::with_capacity(2 * p.branches.len());
                let mut offset = c * plane;
                for ((&grid, conv), pool) in p.grids.iter().zip(&p.branches).zip(pooled) {
                    let bw = conv.out_channels();
                    let g_up =
                        Tensor::from_vec(&[bw, h, w], g[offset..offset + bw * plane].to_vec())?;
                    offset += bw * plane;
                    let g_z = resize_bilinear_adjoint(&g_up, grid, grid)?;
                    let geom = ConvGeom::new(c, grid, grid, 1, 1, 1);
                    let (dw, db, dpool) = conv.backward(pool.data(), &geom, &g_z)?;
                    ops::adaptive_avg_pool_adjoint(dpool.data(), c, h, w, grid, &mut dx);
                    grads.push(dw);
                    grads.push(db);
                }
                Ok((grads, Tensor::from_vec(&[c, h, w], dx)?))
            }
            _ => Err(Error::State(format!(
                "tape record does not belong to a {} layer",
                self.name()
            ))),
        }
    }
}

#[derive(Clone, Debug)]
enum Record {
    Conv {
        col: Vec<f64>,
        geom: ConvGeom,
    },
    Relu {
        out: Tensor,
    },
    Sigmoid {
        out: Tensor,
    },
    MaxPool {
        argmax: Vec<usize>,
        in_shape: [usize; 3],
    },
    Upsample {
        in_h: usize,
        in_w: usize,
    },
    Pyramid {
        in_shape: [usize; 3],
        pooled: Vec<Tensor>,
    },
}

/// Intermediate state recorded by a forward pass, consumed by `backward`.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    records: Vec<Record>,
    output_shape: Vec<usize>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn clear(&mut self) {
        self.records.clear();
        self.output_shape.clear();
    }
}

/// Parameter gradients in declaration order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients(pub Vec<Tensor>);

impl Gradients {
    pub fn zeros_like(params: &[&Tensor]) -> Self {
        Gradients(params.iter().map(|p| Tensor::zeros(p.shape())).collect())
    }

    pub fn accumulate(&mut self, other: &Gradients) -> Result<()> {
        if self.0.len() != other.0.len() {
            return Err(Error::Shape("gradient lists differ in length".into()));
        }
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.add_scaled(b, 1.0)?;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(Tensor::is_finite)
    }
}

/// Ordered list of layers applied in sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Self {
        Network { layers }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let (y, _) = layer.forward(&cur)?;
            check_finite(&y, i, layer)?;
            cur = y;
        }
        Ok(cur)
    }

    pub fn forward_recorded(&self, x: &Tensor, tape: &mut Tape) -> Result<Tensor> {
        tape.clear();
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let (y, rec) = layer.forward(&cur)?;
            check_finite(&y, i, layer)?;
            tape.records.push(rec);
            cur = y;
        }
        tape.output_shape = cur.shape().to_vec();
        Ok(cur)
    }

    /// Reverse pass over a recorded forward. Returns parameter gradients and
    /// the gradient with respect to the network input.
    pub fn backward(&self, tape: &Tape, upstream: &Tensor) -> Result<(Gradients, Tensor)> {
        if tape.output_shape.is_empty() || tape.records.len() != self.layers.len() {
            return Err(Error::State(
                "backward called without a matching recorded forward pass".into(),
            ));
        }
        if upstream.shape() != tape.output_shape.as_slice() {
            return Err(Error::Shape(format!(
                "upstream gradient {:?} vs output {:?}",
                upstream.shape(),
                tape.output_shape
            )));
        }
        let mut per_layer: Vec<Vec<Tensor>> = vec![vec![]; self.layers.len()];
        let mut g = upstream.clone();
        for (i, (layer, rec)) in self.layers.iter().zip(&tape.records).enumerate().rev() {
            let (pg, dx) = layer.backward(rec, &g)?;
            per_layer[i] = pg;
            g = dx;
        }
        Ok((Gradients(per_layer.into_iter().flatten().collect()), g))
    }
}

fn check_finite(y: &Tensor, index: usize, layer: &Layer) -> Result<()> {
    if y.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            layer: index,
            kind: layer.name(),
        })
    }
}
