//! Training loop, prediction, fifth-click simulation, hard examples and the
//! interactive study.

mod fifth;
mod interactive;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autonet::checkpoint::{decode_checkpoint, encode_checkpoint, fingerprint};
use crate::autonet::{Gradients, SegmenterConfig, SegmenterModel, Sgd, SgdConfig, Tape};
use crate::encoding::{assemble_input, GuidanceConfig, ModelInput};
use crate::error::{Error, Result};
use crate::geometry::{
    box_from_points, crop_mask, crop_tensor, extreme_points_from_mask, jitter_points, relax_box,
    threshold_prob, uncrop_prob, BoundingBox, CropSpec, ExtremePointSet, Point,
};
use crate::objective::{balanced_bce, iou, BalancedLossConfig};
use crate::raster::{BinaryMask, Raster};
use crate::tensor::Tensor;

pub use fifth::{
    hard_indices, select_hard_examples, simulate_fifth_point, HardExample, HardExampleSet,
    BOUNDARY_BAND, DEFAULT_HARD_THRESHOLD, DEFAULT_PERTURB_RADIUS,
};
pub use interactive::{
    run_interactive_experiment, InteractiveConfig, InteractiveReport, VariantRow,
    PUBLISHED_INTERACTIVE,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    /// Crop to the relaxed box of the clicks.
    Crop,
    /// Resize the whole image to `R x R`.
    FullImage,
}

/// Everything inference needs besides the weights. Stored in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub guidance: GuidanceConfig,
    pub mode: InputMode,
    pub relax_margin: u32,
    pub resolution: usize,
    /// Trained with corrective fifth clicks.
    #[serde(default)]
    pub five_point: bool,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_threshold() -> f64 {
    0.5
}

impl Default for PipelineConfig {
    fn default() -> Self {
        TrainConfig::default().pipeline()
    }
}

/// Layer widths of the segmenter; the pyramid switch lives in [`TrainConfig`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub stem_widths: Vec<usize>,
    pub dilations: Vec<usize>,
    pub pyramid_grids: Vec<usize>,
    pub branch_width: usize,
    pub head_width: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            stem_widths: vec![16, 32],
            dilations: vec![2, 4],
            pyramid_grids: vec![1, 2, 3, 6],
            branch_width: 8,
            head_width: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub sgd: SgdConfig,
    pub guidance: GuidanceConfig,
    pub mode: InputMode,
    pub relax_margin: u32,
    pub jitter_radius: u32,
    pub resolution: usize,
    pub seed: u64,
    pub balanced: bool,
    pub pyramid: bool,
    pub arch: ArchConfig,
    /// Batches per epoch; by default one pass over the data.
    pub steps_per_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            sgd: SgdConfig::default(),
            guidance: GuidanceConfig::default(),
            mode: InputMode::Crop,
            relax_margin: 50,
            jitter_radius: 10,
            resolution: 128,
            seed: 0,
            balanced: true,
            pyramid: true,
            arch: ArchConfig::default(),
            steps_per_epoch: None,
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.sgd.validate()?;
        self.guidance.validate()?;
        self.segmenter_config().validate()?;
        if self.epochs == 0 {
            return Err(Error::Invalid("epochs must be at least 1".into()));
        }
        if self.steps_per_epoch == Some(0) {
            return Err(Error::Invalid("steps per epoch must be at least 1".into()));
        }
        let f = self.segmenter_config().downsample_factor();
        if self.resolution < crate::geometry::MIN_CROP_RESOLUTION || self.resolution % f != 0 {
            return Err(Error::Invalid(format!(
                "resolution {} must be >= {} and divisible by {}",
                self.resolution,
                crate::geometry::MIN_CROP_RESOLUTION,
                f
            )));
        }
        Ok(())
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            guidance: self.guidance,
            mode: self.mode,
            relax_margin: self.relax_margin,
            resolution: self.resolution,
            five_point: false,
            threshold: 0.5,
        }
    }

    pub fn segmenter_config(&self) -> SegmenterConfig {
        SegmenterConfig {
            input_channels: self.guidance.input_channels(),
            stem_widths: self.arch.stem_widths.clone(),
            dilations: self.arch.dilations.clone(),
            pyramid_grids: if self.pyramid {
                self.arch.pyramid_grids.clone()
            } else {
                Vec::new()
            },
            branch_width: self.arch.branch_width,
            head_width: self.arch.head_width,
            seed: self.seed,
        }
    }

    fn loss(&self) -> BalancedLossConfig {
        BalancedLossConfig {
            balanced: self.balanced,
            ..BalancedLossConfig::default()
        }
    }

    /// Stable hash of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let v = serde_json::to_value(self).expect("config serializes");
        hex_sha256(v.to_string().as_bytes())
    }
}

pub(crate) fn hex_sha256(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{:02x}", b))
        .collect()
}

/// One image with its object mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Raster,
    pub mask: BinaryMask,
}

impl Sample {
    pub fn new(id: impl Into<String>, image: Raster, mask: BinaryMask) -> Result<Self> {
        if image.width() != mask.width() || image.height() != mask.height() {
            return Err(Error::Shape(format!(
                "image is {}x{}, mask {}x{}",
                image.width(),
                image.height(),
                mask.width(),
                mask.height()
            )));
        }
        Ok(Sample {
            id: id.into(),
            image,
            mask,
        })
    }

    /// Zero-jitter extreme points of the ground truth.
    pub fn extreme_points(&self) -> Result<ExtremePointSet> {
        extreme_points_from_mask(&self.mask)
    }
}

/// `[3,H,W]` raw samples; grayscale is replicated.
pub fn rgb_tensor(image: &Raster) -> Result<Tensor> {
    let t = image.to_tensor();
    match image.channels() {
        3 => Ok(t),
        1 => Tensor::concat_channels(&[&t, &t, &t]),
        c => Err(Error::Type(format!("unsupported channel count {}", c))),
    }
}

/// Crop frame for a set of clicks on a `width x height` image.
pub fn crop_for(
    points: &ExtremePointSet,
    pipeline: &PipelineConfig,
    width: usize,
    height: usize,
) -> Result<CropSpec> {
    let bbox = match pipeline.mode {
        InputMode::Crop => relax_box(box_from_points(points), pipeline.relax_margin),
        InputMode::FullImage => BoundingBox::full(width, height),
    };
    CropSpec::new(bbox, pipeline.resolution)
}

/// Network input for an image and its clicks.
pub fn build_input(
    image: &Raster,
    points: &ExtremePointSet,
    pipeline: &PipelineConfig,
) -> Result<(ModelInput, CropSpec)> {
    build_input_clicks(image, points, &[], pipeline)
}

/// As [`build_input`] with further corrective clicks in the guidance map.
/// The crop is always defined by the four extreme points.
pub fn build_input_clicks(
    image: &Raster,
    points: &ExtremePointSet,
    extras: &[Point],
    pipeline: &PipelineConfig,
) -> Result<(ModelInput, CropSpec)> {
    let (w, h) = (image.width(), image.height());
    if let Some((role, p)) = points.out_of_frame(w, h) {
        return Err(Error::Invalid(format!(
            "{} point ({}, {}) is outside the {}x{} image",
            role, p.x, p.y, w, h
        )));
    }
    if let Some(p) = extras.iter().find(|p| !p.in_frame(w, h)) {
        return Err(Error::Invalid(format!(
            "click ({}, {}) is outside the {}x{} image",
            p.x, p.y, w, h
        )));
    }
    let spec = crop_for(points, pipeline, w, h)?;
    let rgb = crop_tensor(&rgb_tensor(image)?, &spec)?;
    let mapped: Vec<Point> = points
        .all()
        .iter()
        .chain(extras)
        .map(|&p| spec.to_crop(p))
        .collect();
    let input = assemble_input(&rgb, &pipeline.guidance, &mapped)?;
    Ok((input, spec))
}

/// A network input with its crop-frame target.
#[derive(Clone, Debug)]
pub struct TrainingExample {
    pub input: ModelInput,
    pub target: BinaryMask,
    pub crop: CropSpec,
    pub points: ExtremePointSet,
}

/// Simulated clicks (jittered extreme points plus an optional extra click),
/// cropped image and mask.
pub fn make_training_example<R: rand::Rng + ?Sized>(
    sample: &Sample,
    cfg: &TrainConfig,
    extra: Option<Point>,
    rng: &mut R,
) -> Result<TrainingExample> {
    let (w, h) = (sample.mask.width(), sample.mask.height());
    let exact = extreme_points_from_mask(&sample.mask)?;
    let mut points = jitter_points(&exact, cfg.jitter_radius, rng, BoundingBox::full(w, h));
    points.extra = extra;
    let (input, crop) = build_input(&sample.image, &points, &cfg.pipeline())?;
    let target = crop_mask(&sample.mask, &crop)?;
    Ok(TrainingExample {
        input,
        target,
        crop,
        points,
    })
}

/// A frozen model with its inference pipeline.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub model: SegmenterModel,
    pub pipeline: PipelineConfig,
}

impl ModelBundle {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let config = serde_json::json!({
            "segmenter": self.model.config(),
            "pipeline": self.pipeline,
        });
        encode_checkpoint(&config, &self.model.params())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (config, tensors) = decode_checkpoint(bytes)?;
        let field = |k: &str| {
            config
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("config lacks '{}'", k)))
        };
        let seg: SegmenterConfig = serde_json::from_value(field("segmenter")?)?;
        let pipeline: PipelineConfig = serde_json::from_value(field("pipeline")?)?;
        if seg.input_channels != pipeline.guidance.input_channels() {
            return Err(Error::Checkpoint(format!(
                "model takes {} channels but the pipeline produces {}",
                seg.input_channels,
                pipeline.guidance.input_channels()
            )));
        }
        let model = SegmenterModel::from_parts(seg, tensors)?.freeze();
        Ok(ModelBundle { model, pipeline })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<String> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, &bytes)?;
        Ok(fingerprint(&bytes))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn fingerprint(&self) -> Result<String> {
        Ok(fingerprint(&self.to_bytes()?))
    }

    pub fn predict(&self, image: &Raster, points: &ExtremePointSet) -> Result<Prediction> {
        predict(&self.model, image, points, &self.pipeline)
    }

    /// IoU of the zero-jitter prediction against the sample's ground truth.
    pub fn score(&self, sample: &Sample, extra: Option<Point>) -> Result<f64> {
        let mut points = sample.extreme_points()?;
        points.extra = extra;
        iou(&self.predict(&sample.image, &points)?.mask, &sample.mask)
    }
}

/// Mean loss and training IoU of one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub train_iou: f64,
}

pub fn log_csv(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,loss,train_iou\n");
    for e in log {
        s.push_str(&format!("{},{},{}\n", e.epoch, e.loss, e.train_iou));
    }
    s
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub bundle: ModelBundle,
    pub log: Vec<EpochLog>,
    /// Loss of the very first batch, before any update.
    pub initial_loss: f64,
}

/// A sample plus the corrective click it is trained with, if any.
#[derive(Clone, Copy, Debug)]
pub struct TrainItem<'a> {
    pub sample: &'a Sample,
    pub extra: Option<Point>,
}

/// Train a fresh model on four-click examples.
pub fn train(dataset: &[Sample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    let items: Vec<TrainItem> = dataset
        .iter()
        .map(|sample| TrainItem {
            sample,
            extra: None,
        })
        .collect();
    train_items(&items, cfg, None, false)
}

/// General training entry: optional warm start, optional fifth clicks.
pub fn train_items(
    items: &[TrainItem],
    cfg: &TrainConfig,
    init: Option<&SegmenterModel>,
    five_point: bool,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if items.is_empty() {
        return Err(Error::Invalid("training set is empty".into()));
    }
    let mut model = match init {
        Some(m) => {
            if m.config().input_channels != cfg.guidance.input_channels() {
                return Err(Error::Shape(
                    "warm-start model does not match the guidance channels".into(),
                ));
            }
            m.thawed()
        }
        None => SegmenterModel::new(&cfg.segmenter_config())?,
    };
    let mut sgd = Sgd::new(cfg.sgd, &model.params())?;
    let loss_cfg = cfg.loss();
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut jitter_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6a09_e667_f3bc_c908);
    let b = cfg.sgd.batch_size;
    let draws_per_epoch = cfg.steps_per_epoch.map(|s| s * b).unwrap_or(items.len());
    let mut stream: Vec<usize> = Vec::new();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut initial_loss = None;

    for epoch in 0..cfg.epochs {
        let mut draws = Vec::with_capacity(draws_per_epoch);
        while draws.len() < draws_per_epoch {
            if stream.is_empty() {
                stream = (0..items.len()).collect();
                stream.shuffle(&mut order_rng);
                stream.reverse();
            }
            draws.push(stream.pop().expect("refilled"));
        }
        let (mut loss_sum, mut iou_sum, mut seen, mut steps) = (0.0, 0.0, 0usize, 0usize);
        for (step, batch) in draws.chunks(b).enumerate() {
            let diverged = |e: Error| {
                if e.is_numeric() {
                    Error::Diverged { epoch, step }
                } else {
                    e
                }
            };
            let mut examples = Vec::with_capacity(batch.len());
            for &i in batch {
                examples.push(make_training_example(
                    items[i].sample,
                    cfg,
                    items[i].extra,
                    &mut jitter_rng,
                )?);
            }
            let mut tapes = Vec::with_capacity(batch.len());
            let mut preds = Vec::with_capacity(batch.len());
            for ex in &examples {
                let mut tape = Tape::new();
                preds.push(
                    model
                        .forward_recorded(&ex.input, &mut tape)
                        .map_err(diverged)?,
                );
                tapes.push(tape);
            }
            let targets: Vec<&BinaryMask> = examples.iter().map(|e| &e.target).collect();
            let pred_refs: Vec<&Tensor> = preds.iter().collect();
            let lv = balanced_bce(&pred_refs, &targets, &loss_cfg)?;
            if !lv.loss.is_finite() {
                return Err(Error::Diverged { epoch, step });
            }
            initial_loss.get_or_insert(lv.loss);
            let mut grads = Gradients::zeros_like(&model.params());
            for (tape, g) in tapes.iter().zip(&lv.grads) {
                grads.accumulate(&model.backward(tape, g).map_err(diverged)?)?;
            }
            if !grads.is_finite() {
                return Err(Error::Diverged { epoch, step });
            }
            sgd.step(&mut model.params_mut()?, &grads.0)?;
            for (p, t) in preds.iter().zip(&targets) {
                iou_sum += iou(&threshold_prob(p, 0.5)?, t)?;
            }
            loss_sum += lv.loss;
            seen += batch.len();
            steps += 1;
        }
        let entry = EpochLog {
            epoch,
            loss: loss_sum / steps as f64,
            train_iou: iou_sum / seen as f64,
        };
        log::info!(
            "epoch {} loss {:.5} train_iou {:.4}",
            entry.epoch,
            entry.loss,
            entry.train_iou
        );
        log.push(entry);
    }
    let pipeline = PipelineConfig {
        five_point,
        ..cfg.pipeline()
    };
    Ok(TrainOutcome {
        bundle: ModelBundle {
            model: model.freeze(),
            pipeline,
        },
        log,
        initial_loss: initial_loss.unwrap_or(f64::NAN),
    })
}

/// Prediction in both frames.
#[derive(Clone, Debug)]
pub struct Prediction {
    /// Binary mask in the image frame.
    pub mask: BinaryMask,
    /// Probability map `[1,H,W]` in the image frame, zero outside the crop.
    pub prob: Tensor,
    /// Raw network output `[1,R,R]`.
    pub crop_prob: Tensor,
    pub crop: CropSpec,
}

pub fn predict(
    model: &SegmenterModel,
    image: &Raster,
    points: &ExtremePointSet,
    pipeline: &PipelineConfig,
) -> Result<Prediction> {
    predict_clicks(model, image, points, &[], pipeline)
}

/// Prediction with any number of corrective clicks beyond `points.extra`.
pub fn predict_clicks(
    model: &SegmenterModel,
    image: &Raster,
    points: &ExtremePointSet,
    extras: &[Point],
    pipeline: &PipelineConfig,
) -> Result<Prediction> {
    if !model.is_frozen() {
        return Err(Error::State("prediction requires a frozen model".into()));
    }
    let (input, crop) = build_input_clicks(image, points, extras, pipeline)?;
    let crop_prob = model.forward(&input)?;
    let prob = uncrop_prob(&crop_prob, &crop, image.width(), image.height())?;
    let mask = threshold_prob(&prob, pipeline.threshold)?;
    Ok(Prediction {
        mask,
        prob,
        crop_prob,
        crop,
    })
}

/// Deterministic split: ids ordered by SHA-256, the first `val_fraction` of
/// them (rounded) go to validation. Returns `(train, val)` index lists, each
/// in dataset order.
pub fn hash_split(samples: &[Sample], val_fraction: f64) -> (Vec<usize>, Vec<usize>) {
    let mut keyed: Vec<(String, usize)> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| (hex_sha256(s.id.as_bytes()), i))
        .collect();
    keyed.sort();
    let n_val = ((samples.len() as f64) * val_fraction.clamp(0.0, 1.0)).round() as usize;
    let mut val: Vec<usize> = keyed[..n_val].iter().map(|k| k.1).collect();
    let mut train: Vec<usize> = keyed[n_val..].iter().map(|k| k.1).collect();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}
