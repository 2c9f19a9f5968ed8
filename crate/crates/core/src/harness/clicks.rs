use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::objective::iou;
use crate::trainer::{predict_clicks, simulate_fifth_point, ModelBundle, Sample};

/// Published reference: mean clicks to 85% IoU and IoU at four clicks.
pub const PUBLISHED_CLICKS_AT_85: f64 = 4.0;
pub const PUBLISHED_IOU_AT_4: f64 = 91.5;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClicksReport {
    pub targets: Vec<f64>,
    /// Mean clicks per target; `max_clicks + 1` counts for never reaching it.
    pub mean_clicks: Vec<f64>,
    /// Mean IoU with the four extreme clicks only.
    pub quality_at_4: f64,
    pub max_clicks: usize,
    /// IoU after 4, 5, ... clicks for every sample.
    pub trajectories: Vec<Vec<f64>>,
}

impl ClicksReport {
    pub fn to_text(&self) -> String {
        let mut s = format!("{:>10}{:>14}\n", "target", "mean clicks");
        for (t, c) in self.targets.iter().zip(&self.mean_clicks) {
            s.push_str(&format!("{:>9.1}%{:>14.2}\n", 100.0 * t, c));
        }
        s.push_str(&format!(
            "IoU at 4 clicks: {:.2}%\n",
            100.0 * self.quality_at_4
        ));
        s.push_str(&format!(
            "published: {} clicks at 85%, {}% at 4 clicks\n",
            PUBLISHED_CLICKS_AT_85, PUBLISHED_IOU_AT_4
        ));
        s
    }
}

/// Clicks needed for `target` given an IoU trajectory starting at four clicks.
pub fn clicks_for(trajectory: &[f64], target: f64, max_clicks: usize) -> usize {
    trajectory
        .iter()
        .position(|&v| v >= target)
        .map(|k| 4 + k)
        .filter(|&c| c <= max_clicks)
        .unwrap_or(max_clicks + 1)
}

/// Start from the four extreme clicks and keep adding simulated boundary
/// clicks at the largest error of the current prediction.
pub fn clicks_to_quality(
    bundle: &ModelBundle,
    samples: &[Sample],
    targets: &[f64],
    max_clicks: usize,
    perturb_radius: u32,
    seed: u64,
) -> Result<ClicksReport> {
    if max_clicks < 4 {
        return Err(Error::Invalid("max clicks must be at least 4".into()));
    }
    if max_clicks > 4 && !bundle.pipeline.five_point {
        return Err(Error::Invalid(
            "model was not trained with corrective clicks".into(),
        ));
    }
    if samples.is_empty() {
        return Err(Error::Invalid("evaluation set is empty".into()));
    }
    let best_target = targets.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut trajectories = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let points = s.extreme_points()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let mut extras: Vec<Point> = Vec::new();
        let mut traj = Vec::new();
        loop {
            let pred = predict_clicks(&bundle.model, &s.image, &points, &extras, &bundle.pipeline)?;
            let v = iou(&pred.mask, &s.mask)?;
            traj.push(v);
            if v >= best_target || 4 + extras.len() >= max_clicks {
                break;
            }
            match simulate_fifth_point(&pred.prob, &s.mask, &mut rng, perturb_radius) {
                Ok(p) => extras.push(p),
                Err(Error::NoRefinementNeeded) => break,
                Err(e) => return Err(e),
            }
        }
        trajectories.push(traj);
    }
    let n = samples.len() as f64;
    let mean_clicks = targets
        .iter()
        .map(|&t| {
            trajectories
                .iter()
                .map(|tr| clicks_for(tr, t, max_clicks) as f64)
                .sum::<f64>()
                / n
        })
        .collect();
    let quality_at_4 = trajectories.iter().map(|t| t[0]).sum::<f64>() / n;
    Ok(ClicksReport {
        targets: targets.to_vec(),
        mean_clicks,
        quality_at_4,
        max_clicks,
        trajectories,
    })
}
