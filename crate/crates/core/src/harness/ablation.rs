use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::dataset::dataset_hash;
use crate::encoding::GuidanceKind;
use crate::error::{Error, Result};
use crate::trainer::{hash_split, train, InputMode, ModelBundle, Sample, TrainConfig};

/// One component comparison. `B` is the choice the published study favours
/// (or, for the distance map, the one it tested against the default).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    ExtremePoints,
    Crop,
    Balanced,
    Pyramid,
    DistanceMap,
}

impl AblationAxis {
    pub const ALL: [AblationAxis; 5] = [
        AblationAxis::ExtremePoints,
        AblationAxis::Crop,
        AblationAxis::Balanced,
        AblationAxis::Pyramid,
        AblationAxis::DistanceMap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationAxis::ExtremePoints => "extreme_points",
            AblationAxis::Crop => "crop",
            AblationAxis::Balanced => "balanced",
            AblationAxis::Pyramid => "pyramid",
            AblationAxis::DistanceMap => "distance_map",
        }
    }

    pub fn labels(self) -> (&'static str, &'static str) {
        match self {
            AblationAxis::ExtremePoints => ("bounding box", "extreme points"),
            AblationAxis::Crop => ("full image", "crop"),
            AblationAxis::Balanced => ("plain loss", "balanced loss"),
            AblationAxis::Pyramid => ("plain head", "pyramid head"),
            AblationAxis::DistanceMap => ("fixed gaussians", "distance map"),
        }
    }

    /// Published gain of B over A, in IoU points.
    pub fn published_gain(self) -> f64 {
        match self {
            AblationAxis::ExtremePoints => 3.1,
            AblationAxis::Crop => 7.9,
            AblationAxis::Balanced => 3.3,
            AblationAxis::Pyramid => 2.3,
            AblationAxis::DistanceMap => -1.3,
        }
    }

    /// The pair of configs compared on this axis, derived from `base` by
    /// setting only the ablated component.
    pub fn configs(self, base: &TrainConfig) -> (TrainConfig, TrainConfig) {
        let (mut a, mut b) = (base.clone(), base.clone());
        match self {
            AblationAxis::ExtremePoints => a.guidance.kind = GuidanceKind::None,
            AblationAxis::Crop => {
                a.mode = InputMode::FullImage;
                b.mode = InputMode::Crop;
            }
            AblationAxis::Balanced => {
                a.balanced = false;
                b.balanced = true;
            }
            AblationAxis::Pyramid => {
                a.pyramid = false;
                b.pyramid = true;
            }
            AblationAxis::DistanceMap => {
                a.guidance.kind = GuidanceKind::Gaussian;
                b.guidance.kind = GuidanceKind::Distance;
            }
        }
        (a, b)
    }
}

/// JSON paths where two configs differ.
pub fn config_diff(a: &TrainConfig, b: &TrainConfig) -> Vec<String> {
    fn walk(path: &str, a: &Value, b: &Value, out: &mut Vec<String>) {
        match (a, b) {
            (Value::Object(ma), Value::Object(mb)) => {
                let keys: std::collections::BTreeSet<&String> =
                    ma.keys().chain(mb.keys()).collect();
                for k in keys {
                    let p = if path.is_empty() {
                        k.clone()
                    } else {
                        format!("{}.{}", path, k)
                    };
                    walk(
                        &p,
                        ma.get(k).unwrap_or(&Value::Null),
                        mb.get(k).unwrap_or(&Value::Null),
                        out,
                    );
                }
            }
            _ if a != b => out.push(path.to_string()),
            _ => {}
        }
    }
    let mut out = Vec::new();
    walk(
        "",
        &serde_json::to_value(a).expect("config serializes"),
        &serde_json::to_value(b).expect("config serializes"),
        &mut out,
    );
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationOptions {
    pub seeds: Vec<u64>,
    pub val_fraction: f64,
    /// Where to save the base model of each seed, if anywhere.
    pub model_dir: Option<PathBuf>,
}

impl Default for AblationOptions {
    fn default() -> Self {
        AblationOptions {
            seeds: vec![0, 1, 2],
            val_fraction: 0.2,
            model_dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub axis: AblationAxis,
    pub component_a: String,
    pub component_b: String,
    /// Mean IoU over seeds, in points (percent).
    pub iou_a: f64,
    pub iou_b: f64,
    /// `iou_b - iou_a`.
    pub gain: f64,
    pub published_gain: f64,
    pub per_seed_a: Vec<f64>,
    pub per_seed_b: Vec<f64>,
    /// Config fields that differ between A and B.
    pub diff: Vec<String>,
}

impl AblationRow {
    /// Seeds on which B beats A by at least `margin` IoU points.
    pub fn seeds_with_gain(&self, margin: f64) -> usize {
        self.per_seed_a
            .iter()
            .zip(&self.per_seed_b)
            .filter(|(a, b)| *b - *a >= margin)
            .count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub seeds: Vec<u64>,
    pub dataset_hash: String,
    pub config_fingerprint: String,
    pub train_size: usize,
    pub val_size: usize,
}

impl AblationReport {
    pub fn row(&self, axis: AblationAxis) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.axis == axis)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "axis,component_a,component_b,iou_a,iou_b,gain,published_gain,seeds,diff\n",
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.axis.name(),
                r.component_a,
                r.component_b,
                r.iou_a,
                r.iou_b,
                r.gain,
                r.published_gain,
                r.per_seed_a.len(),
                r.diff.join(";")
            ));
        }
        s.push_str(&format!(
            "# dataset {}\n# config {}\n",
            self.dataset_hash, self.config_fingerprint
        ));
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "train {}  val {}  seeds {:?}\n",
            self.train_size, self.val_size, self.seeds
        );
        s.push_str(&format!(
            "{:<16}{:>16}{:>16}{:>9}{:>9}{:>8}{:>11}\n",
            "axis", "A", "B", "IoU A", "IoU B", "gain", "published"
        ));
        for r in &self.rows {
            s.push_str(&format!(
                "{:<16}{:>16}{:>16}{:>9.2}{:>9.2}{:>+8.2}{:>+11.1}\n",
                r.axis.name(),
                r.component_a,
                r.component_b,
                r.iou_a,
                r.iou_b,
                r.gain,
                r.published_gain
            ));
        }
        s.push_str(&format!(
            "dataset {}\nconfig  {}\n",
            self.dataset_hash, self.config_fingerprint
        ));
        s
    }
}

/// Mean zero-jitter IoU of a model over samples.
pub fn mean_val_iou(bundle: &ModelBundle, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Invalid("evaluation set is empty".into()));
    }
    let mut sum = 0.0;
    for s in samples {
        sum += bundle.score(s, None)?;
    }
    Ok(sum / samples.len() as f64)
}

/// Train both sides of every axis for every seed on the hash-split training
/// part and score them on the validation part. Identical configs are trained
/// once per seed.
pub fn run_ablation(
    dataset: &[Sample],
    base: &TrainConfig,
    axes: &[AblationAxis],
    opts: &AblationOptions,
) -> Result<AblationReport> {
    base.validate()?;
    if opts.seeds.is_empty() {
        return Err(Error::Invalid("ablation needs at least one seed".into()));
    }
    let (train_idx, val_idx) = hash_split(dataset, opts.val_fraction);
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::Invalid(
            "dataset too small for a train/val split".into(),
        ));
    }
    let train_set: Vec<Sample> = train_idx.iter().map(|&i| dataset[i].clone()).collect();
    let val_set: Vec<Sample> = val_idx.iter().map(|&i| dataset[i].clone()).collect();
    if let Some(dir) = &opts.model_dir {
        std::fs::create_dir_all(dir)?;
    }

    let pairs: Vec<(AblationAxis, TrainConfig, TrainConfig)> = axes
        .iter()
        .map(|&ax| {
            let (a, b) = ax.configs(base);
            (ax, a, b)
        })
        .collect();
    let mut per_seed: Vec<Vec<(f64, f64)>> = vec![Vec::new(); pairs.len()];
    for &seed in &opts.seeds {
        let mut cache: BTreeMap<String, f64> = BTreeMap::new();
        let mut score = |cfg: &TrainConfig, variant: String| -> Result<f64> {
            let cfg = TrainConfig {
                seed,
                ..cfg.clone()
            };
            let key = cfg.fingerprint();
            if let Some(&v) = cache.get(&key) {
                return Ok(v);
            }
            let tag = |e: Error| Error::Variant {
                variant: variant.clone(),
                source: Box::new(e),
            };
            let out = train(&train_set, &cfg).map_err(tag)?;
            let v = mean_val_iou(&out.bundle, &val_set).map_err(tag)?;
            log::info!("seed {} {}: val IoU {:.4}", seed, variant, v);
            if let (Some(dir), true) = (
                &opts.model_dir,
                cfg == TrainConfig {
                    seed,
                    ..base.clone()
                },
            ) {
                out.bundle
                    .save(dir.join(format!("base-seed{}.dxf", seed)))?;
            }
            cache.insert(key, v);
            Ok(v)
        };
        for (k, (ax, a, b)) in pairs.iter().enumerate() {
            let (la, lb) = ax.labels();
            let va = score(a, format!("{} / {}", ax.name(), la))?;
            let vb = score(b, format!("{} / {}", ax.name(), lb))?;
            per_seed[k].push((va, vb));
        }
    }

    let rows = pairs
        .iter()
        .zip(per_seed)
        .map(|((ax, a, b), vals)| {
            let n = vals.len() as f64;
            let per_seed_a: Vec<f64> = vals.iter().map(|v| 100.0 * v.0).collect();
            let per_seed_b: Vec<f64> = vals.iter().map(|v| 100.0 * v.1).collect();
            let iou_a = per_seed_a.iter().sum::<f64>() / n;
            let iou_b = per_seed_b.iter().sum::<f64>() / n;
            let (la, lb) = ax.labels();
            AblationRow {
                axis: *ax,
                component_a: la.to_string(),
                component_b: lb.to_string(),
                iou_a,
                iou_b,
                gain: iou_b - iou_a,
                published_gain: ax.published_gain(),
                per_seed_a,
                per_seed_b,
                diff: config_diff(a, b),
            }
        })
        .collect();
    Ok(AblationReport {
        rows,
        seeds: opts.seeds.clone(),
        dataset_hash: dataset_hash(dataset),
        config_fingerprint: base.fingerprint(),
        train_size: train_set.len(),
        val_size: val_set.len(),
    })
}
