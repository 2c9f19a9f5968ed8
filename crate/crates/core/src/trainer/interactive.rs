use serde::{Deserialize, Serialize};

use super::fifth::{
    select_hard_examples, HardExampleSet, DEFAULT_HARD_THRESHOLD, DEFAULT_PERTURB_RADIUS,
};
use super::{hash_split, train_items, ModelBundle, Sample, TrainConfig, TrainItem};
use crate::error::{Error, Result};

/// Reference hard-set IoUs (%) of the four variants as published.
pub const PUBLISHED_INTERACTIVE: [(&str, f64); 4] = [
    ("4 points", 59.6),
    ("4 points-all", 69.0),
    ("5 points", 69.2),
    ("5 points + OHEM", 73.2),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InteractiveConfig {
    /// Base-phase training; continued phases reuse it.
    pub train: TrainConfig,
    pub hard_threshold: f64,
    pub perturb_radius: u32,
    pub val_fraction: f64,
    /// Continued-phase sample draws as a fraction of the base phase.
    pub continue_fraction: f64,
}

impl Default for InteractiveConfig {
    fn default() -> Self {
        InteractiveConfig {
            train: TrainConfig::default(),
            hard_threshold: DEFAULT_HARD_THRESHOLD,
            perturb_radius: DEFAULT_PERTURB_RADIUS,
            val_fraction: 0.2,
            continue_fraction: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VariantRow {
    pub name: String,
    /// Mean IoU on the held-out hard cases.
    pub val_hard_iou: f64,
    /// Mean IoU on the split-2 hard examples used in continued training.
    pub split2_hard_iou: f64,
    pub published_iou: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InteractiveReport {
    pub rows: Vec<VariantRow>,
    pub split1_size: usize,
    pub split2_size: usize,
    pub val_size: usize,
    pub split2_hard: usize,
    pub val_hard: usize,
    /// Set when no hard examples were found and continued training was skipped.
    pub degenerate: Option<String>,
}

impl InteractiveReport {
    pub fn row(&self, name: &str) -> Option<&VariantRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,val_hard_iou,split2_hard_iou,published_iou\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{}\n",
                r.name, r.val_hard_iou, r.split2_hard_iou, r.published_iou
            ));
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "split1 {}  split2 {} ({} hard)  val {} ({} hard)\n",
            self.split1_size, self.split2_size, self.split2_hard, self.val_size, self.val_hard
        );
        s.push_str(&format!(
            "{:<18}{:>14}{:>16}{:>12}\n",
            "variant", "val hard IoU", "split2 hard IoU", "published"
        ));
        for r in &self.rows {
            s.push_str(&format!(
                "{:<18}{:>14.2}{:>16.2}{:>12.1}\n",
                r.name,
                100.0 * r.val_hard_iou,
                100.0 * r.split2_hard_iou,
                r.published_iou
            ));
        }
        if let Some(d) = &self.degenerate {
            s.push_str(&format!("degenerate run: {}\n", d));
        }
        s
    }
}

fn mean_score(
    bundle: &ModelBundle,
    samples: &[Sample],
    hard: &HardExampleSet,
    with_fifth: bool,
) -> Result<f64> {
    if hard.is_empty() {
        return Ok(f64::NAN);
    }
    let mut sum = 0.0;
    for m in &hard.members {
        let extra = with_fifth.then_some(m.fifth);
        sum += bundle.score(&samples[m.index], extra)?;
    }
    Ok(sum / hard.len() as f64)
}

/// Base model on split 1, hard examples mined on split 2 and on the held-out
/// split, then three continued-training variants warm-started from the base:
/// four clicks on split 1 plus the hard examples, five clicks on the same
/// data, and five clicks drawing only hard examples. Every continued phase
/// gets the same number of sample draws.
pub fn run_interactive_experiment(
    dataset: &[Sample],
    cfg: &InteractiveConfig,
) -> Result<InteractiveReport> {
    let (train_idx, val_idx) = hash_split(dataset, cfg.val_fraction);
    if train_idx.len() < 2 || val_idx.is_empty() {
        return Err(Error::Invalid(format!(
            "dataset of {} samples is too small to split",
            dataset.len()
        )));
    }
    let half = train_idx.len() / 2;
    let pick = |idx: &[usize]| idx.iter().map(|&i| dataset[i].clone()).collect::<Vec<_>>();
    let split1 = pick(&train_idx[..half]);
    let split2 = pick(&train_idx[half..]);
    let val = pick(&val_idx);

    let tag = |variant: &str| {
        let variant = variant.to_string();
        move |e: Error| Error::Variant {
            variant: variant.clone(),
            source: Box::new(e),
        }
    };
    let base_items: Vec<TrainItem> = split1
        .iter()
        .map(|sample| TrainItem {
            sample,
            extra: None,
        })
        .collect();
    let base = train_items(&base_items, &cfg.train, None, false)
        .map_err(tag("4 points"))?
        .bundle;

    let seed = cfg.train.seed;
    let hard2 = select_hard_examples(&base, &split2, cfg.hard_threshold, cfg.perturb_radius, seed)?;
    let hard_val = select_hard_examples(
        &base,
        &val,
        cfg.hard_threshold,
        cfg.perturb_radius,
        seed ^ 0x5f5f,
    )?;
    let mut report = InteractiveReport {
        rows: Vec::new(),
        split1_size: split1.len(),
        split2_size: split2.len(),
        val_size: val.len(),
        split2_hard: hard2.len(),
        val_hard: hard_val.len(),
        degenerate: None,
    };
    let row = |name: &str, b: &ModelBundle, fifth: bool| -> Result<VariantRow> {
        Ok(VariantRow {
            name: name.to_string(),
            val_hard_iou: mean_score(b, &val, &hard_val, fifth)?,
            split2_hard_iou: mean_score(b, &split2, &hard2, fifth)?,
            published_iou: PUBLISHED_INTERACTIVE
                .iter()
                .find(|p| p.0 == name)
                .map_or(f64::NAN, |p| p.1),
        })
    };
    report.rows.push(row("4 points", &base, false)?);
    if hard2.is_empty() {
        report.degenerate = Some("the base model left no hard examples on split 2".into());
        return Ok(report);
    }

    let base_draws = cfg.train.epochs
        * cfg
            .train
            .steps_per_epoch
            .map(|s| s * cfg.train.sgd.batch_size)
            .unwrap_or(split1.len());
    let draws = ((base_draws as f64 * cfg.continue_fraction).round() as usize).max(1);
    let b = cfg.train.sgd.batch_size;
    let epochs = ((cfg.train.epochs as f64 * cfg.continue_fraction).round() as usize).max(1);
    let cont = TrainConfig {
        epochs,
        steps_per_epoch: Some(draws.div_ceil(b).div_ceil(epochs).max(1)),
        seed: cfg.train.seed.wrapping_add(1),
        ..cfg.train.clone()
    };

    let hard_items = |fifth: bool| -> Vec<TrainItem> {
        hard2
            .members
            .iter()
            .map(|m| TrainItem {
                sample: &split2[m.index],
                extra: fifth.then_some(m.fifth),
            })
            .collect()
    };
    let mut all4 = base_items.clone();
    all4.extend(hard_items(false));
    let mut all5 = base_items.clone();
    all5.extend(hard_items(true));
    let ohem = hard_items(true);

    let variants: [(&str, &[TrainItem], bool); 3] = [
        ("4 points-all", &all4, false),
        ("5 points", &all5, true),
        ("5 points + OHEM", &ohem, true),
    ];
    for (name, items, fifth) in variants {
        let bundle = train_items(items, &cont, Some(&base.model), fifth)
            .map_err(tag(name))?
            .bundle;
        report.rows.push(row(name, &bundle, fifth)?);
    }
    Ok(report)
}
