//! Class-balanced binary cross-entropy and the evaluation metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::raster::BinaryMask;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalancedLossConfig {
    pub balanced: bool,
    pub epsilon: f64,
}

impl Default for BalancedLossConfig {
    fn default() -> Self {
        BalancedLossConfig {
            balanced: true,
            epsilon: 1e-7,
        }
    }
}

impl BalancedLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(Error::Invalid(format!(
                "loss epsilon {} must lie in (0, 0.5)",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Per-class pixel weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassWeights {
    pub fg: f64,
    pub bg: f64,
}

/// Each class is weighted by the frequency of the other one within the batch,
/// so both classes carry equal total weight. A class absent from the batch
/// gets weight 0 and the present one weight 1.
pub fn class_weights(labels: &[&BinaryMask]) -> Result<ClassWeights> {
    if labels.is_empty() {
        return Err(Error::Invalid("class weights need a nonempty batch".into()));
    }
    let n: usize = labels.iter().map(|m| m.bits().len()).sum();
    let n1: usize = labels.iter().map(|m| m.count()).sum();
    let n0 = n - n1;
    if n == 0 {
        return Err(Error::Invalid("batch has no pixels".into()));
    }
    Ok(match (n0, n1) {
        (0, _) => ClassWeights { fg: 1.0, bg: 0.0 },
        (_, 0) => ClassWeights { fg: 0.0, bg: 1.0 },
        _ => ClassWeights {
            fg: n0 as f64 / n as f64,
            bg: n1 as f64 / n as f64,
        },
    })
}

/// Loss value with `dL/dy_hat` for every prediction in the batch.
#[derive(Clone, Debug)]
pub struct LossValue {
    pub loss: f64,
    pub grads: Vec<Tensor>,
}

/// Weighted BCE of one prediction, normalized by `total_pixels` (the batch
/// size in pixels). Predictions are clamped to `[eps, 1-eps]`; the gradient
/// is that of the clamped expression, so it vanishes where the clamp is active.
pub fn weighted_bce(
    pred: &Tensor,
    label: &BinaryMask,
    weights: ClassWeights,
    total_pixels: usize,
    epsilon: f64,
) -> Result<(f64, Tensor)> {
    if pred.len() != label.bits().len() {
        return Err(Error::Shape(format!(
            "prediction has {} values, label {}",
            pred.len(),
            label.bits().len()
        )));
    }
    let norm = 1.0 / total_pixels as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; pred.len()];
    for ((g, &p), &y) in grad.iter_mut().zip(pred.data()).zip(label.bits()) {
        let pc = p.clamp(epsilon, 1.0 - epsilon);
        let inside = p > epsilon && p < 1.0 - epsilon;
        if y == 1 {
            loss -= weights.fg * pc.ln();
            if inside {
                *g = -weights.fg / pc * norm;
            }
        } else {
            loss -= weights.bg * (1.0 - pc).ln();
            if inside {
                *g = weights.bg / (1.0 - pc) * norm;
            }
        }
    }
    Ok((loss * norm, Tensor::from_vec(pred.shape(), grad)?))
}

/// Batch loss `sum_j w_{y_j} BCE(y_j, y_hat_j) / N`. With `balanced = false`
/// both weights are 1 (plain mean BCE).
pub fn balanced_bce(
    preds: &[&Tensor],
    labels: &[&BinaryMask],
    cfg: &BalancedLossConfig,
) -> Result<LossValue> {
    cfg.validate()?;
    if preds.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let weights = if cfg.balanced {
        class_weights(labels)?
    } else {
        ClassWeights { fg: 1.0, bg: 1.0 }
    };
    let n: usize = labels.iter().map(|m| m.bits().len()).sum();
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(preds.len());
    for (p, y) in preds.iter().zip(labels) {
        let (l, g) = weighted_bce(p, y, weights, n, cfg.epsilon)?;
        loss += l;
        grads.push(g);
    }
    Ok(LossValue { loss, grads })
}

/// `|a and b| / |a or b|`; two empty masks score 1.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(Error::Shape(format!(
            "{}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.bits().iter().zip(b.bits()) {
        inter += (x & y) as usize;
        union += (x | y) as usize;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// Percentage of pixels inside `bbox` where the masks disagree.
pub fn error_rate_in_box(pred: &BinaryMask, gt: &BinaryMask, bbox: BoundingBox) -> Result<f64> {
    if !pred.same_dims(gt) {
        return Err(Error::Shape(
            "prediction and ground truth differ in size".into(),
        ));
    }
    let inside = bbox.is_valid()
        && bbox.x0 >= 0
        && bbox.y0 >= 0
        && (bbox.x1 as usize) < gt.width()
        && (bbox.y1 as usize) < gt.height();
    if !inside {
        return Err(Error::Invalid(format!(
            "box {:?} is empty or outside the {}x{} image",
            bbox,
            gt.width(),
            gt.height()
        )));
    }
    let mut wrong = 0usize;
    for y in bbox.y0..=bbox.y1 {
        for x in bbox.x0..=bbox.x1 {
            let (x, y) = (x as usize, y as usize);
            wrong += (pred.get(x, y) != gt.get(x, y)) as usize;
        }
    }
    let total = (bbox.width() * bbox.height()) as f64;
    Ok(100.0 * wrong as f64 / total)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MeanIou {
    pub mean: f64,
    /// Per-category means when categories were given.
    pub per_category: BTreeMap<String, f64>,
}

/// Mean over objects, or the mean of per-category means when labelled.
pub fn mean_iou(ious: &[f64], categories: Option<&[String]>) -> Result<MeanIou> {
    if ious.is_empty() {
        return Err(Error::Invalid("mean IoU of no objects".into()));
    }
    match categories {
        None => Ok(MeanIou {
            mean: ious.iter().sum::<f64>() / ious.len() as f64,
            per_category: BTreeMap::new(),
        }),
        Some(cats) => {
            if cats.len() != ious.len() {
                return Err(Error::Shape(format!(
                    "{} IoUs but {} category labels",
                    ious.len(),
                    cats.len()
                )));
            }
            let mut groups: BTreeMap<String, (f64, usize)> = BTreeMap::new();
            for (v, c) in ious.iter().zip(cats) {
                let e = groups.entry(c.clone()).or_default();
                e.0 += v;
                e.1 += 1;
            }
            let per_category: BTreeMap<String, f64> = groups
                .into_iter()
                .map(|(c, (s, n))| (c, s / n as f64))
                .collect();
            let mean = per_category.values().sum::<f64>() / per_category.len() as f64;
            Ok(MeanIou { mean, per_category })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(bits: &[u8], w: usize) -> BinaryMask {
        BinaryMask::from_bits(w, bits.len() / w, bits.to_vec()).unwrap()
    }

    #[test]
    fn weights_from_frequencies() {
        let mut bits = vec![0u8; 100];
        bits[..25].fill(1);
        let m = mask(&bits, 10);
        let w = class_weights(&[&m]).unwrap();
        assert_eq!((w.fg, w.bg), (0.75, 0.25));
        assert_eq!(w.fg * 25.0, w.bg * 75.0);

        let half = mask(&[1, 0, 1, 0], 2);
        let w = class_weights(&[&half]).unwrap();
        assert_eq!((w.fg, w.bg), (0.5, 0.5));

        let all = mask(&[1, 1, 1, 1], 2);
        let w = class_weights(&[&all]).unwrap();
        assert_eq!((w.fg, w.bg), (1.0, 0.0));
        let none = mask(&[0, 0, 0, 0], 2);
        let w = class_weights(&[&none]).unwrap();
        assert_eq!((w.fg, w.bg), (0.0, 1.0));
        assert!(class_weights(&[]).is_err());
    }

    #[test]
    fn two_pixel_hand_example() {
        let y = mask(&[1, 0], 2);
        let p = Tensor::from_vec(&[1, 1, 2], vec![0.9, 0.8]).unwrap();
        let v = balanced_bce(&[&p], &[&y], &BalancedLossConfig::default()).unwrap();
        let expected = (0.5 * -(0.9f64.ln()) + 0.5 * -(0.2f64.ln())) / 2.0;
        assert!((v.loss - expected).abs() < 1e-12);
        assert!((v.loss - 0.42870).abs() < 1e-5);
    }

    #[test]
    fn perfect_prediction_is_near_zero() {
        let y = mask(&[1, 0, 0, 1, 1, 0], 3);
        let p = y.to_tensor();
        let v = balanced_bce(&[&p], &[&y], &BalancedLossConfig::default()).unwrap();
        assert!(v.loss >= 0.0 && v.loss <= -(1.0 - 1e-7f64).ln() + 1e-15);
    }

    #[test]
    fn unbalanced_is_twice_balanced_on_even_split() {
        let y = mask(&[1, 0, 1, 0, 0, 1], 3);
        let p = Tensor::from_vec(&[1, 2, 3], vec![0.3, 0.6, 0.9, 0.2, 0.5, 0.7]).unwrap();
        let bal = balanced_bce(&[&p], &[&y], &BalancedLossConfig::default()).unwrap();
        let plain = balanced_bce(
            &[&p],
            &[&y],
            &BalancedLossConfig {
                balanced: false,
                ..Default::default()
            },
        )
        .unwrap();
        let mean_bce: f64 = p
            .data()
            .iter()
            .zip(y.bits())
            .map(|(&p, &y)| if y == 1 { -p.ln() } else { -(1.0 - p).ln() })
            .sum::<f64>()
            / 6.0;
        assert!((plain.loss - mean_bce).abs() < 1e-12);
        assert!((bal.loss - 0.5 * plain.loss).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let y = mask(&[1, 0, 0, 1, 0, 0, 0, 1], 4);
        let p =
            Tensor::from_vec(&[1, 2, 4], vec![0.3, 0.6, 0.1, 0.8, 0.45, 0.2, 0.7, 0.55]).unwrap();
        let cfg = BalancedLossConfig::default();
        let v = balanced_bce(&[&p], &[&y], &cfg).unwrap();
        let h = 1e-6;
        for i in 0..p.len() {
            let mut a = p.clone();
            a.data_mut()[i] += h;
            let mut b = p.clone();
            b.data_mut()[i] -= h;
            let fd = (balanced_bce(&[&a], &[&y], &cfg).unwrap().loss
                - balanced_bce(&[&b], &[&y], &cfg).unwrap().loss)
                / (2.0 * h);
            assert!((fd - v.grads[0].data()[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn loss_decreases_on_logistic_toy() {
        // one logit shared by every pixel; gradient step must lower the loss
        let y = mask(&[1, 1, 1, 0], 2);
        let cfg = BalancedLossConfig {
            balanced: false,
            ..Default::default()
        };
        let mut z = -2.0f64;
        let mut prev = f64::INFINITY;
        for _ in 0..20 {
            let s = 1.0 / (1.0 + (-z).exp());
            let p = Tensor::full(&[1, 2, 2], s);
            let v = balanced_bce(&[&p], &[&y], &cfg).unwrap();
            assert!(v.loss >= 0.0 && v.loss < prev);
            prev = v.loss;
            let dz: f64 = v.grads[0].data().iter().map(|g| g * s * (1.0 - s)).sum();
            z -= 1.0 * dz;
        }
    }

    #[test]
    fn iou_examples() {
        let a = BinaryMask::from_fn(8, 8, |x, y| x < 4 && y < 4);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        let far = BinaryMask::from_fn(8, 8, |x, y| x >= 5 && y >= 5);
        assert_eq!(iou(&a, &far).unwrap(), 0.0);
        let b = BinaryMask::from_fn(8, 8, |x, y| (2..6).contains(&x) && (2..6).contains(&y));
        assert!((iou(&a, &b).unwrap() - 4.0 / 28.0).abs() < 1e-15);
        assert_eq!(
            iou(&BinaryMask::new(3, 3), &BinaryMask::new(3, 3)).unwrap(),
            1.0
        );
        assert!(iou(&BinaryMask::new(3, 3), &BinaryMask::new(3, 4)).is_err());
    }

    #[test]
    fn error_rate_examples() {
        let gt = BinaryMask::from_fn(12, 12, |x, y| x > 3 && y > 5);
        let b = BoundingBox::new(1, 1, 10, 10);
        assert_eq!(error_rate_in_box(&gt, &gt, b).unwrap(), 0.0);
        let inv = BinaryMask::from_fn(12, 12, |x, y| !gt.get(x, y));
        assert_eq!(error_rate_in_box(&inv, &gt, b).unwrap(), 100.0);
        let mut seven = gt.clone();
        for i in 0..7 {
            seven.set(1 + i, 1, !gt.get(1 + i, 1));
        }
        assert!((error_rate_in_box(&seven, &gt, b).unwrap() - 7.0).abs() < 1e-12);
        assert!(error_rate_in_box(&gt, &gt, BoundingBox::new(5, 5, 4, 4)).is_err());
    }

    #[test]
    fn mean_iou_examples() {
        assert_eq!(mean_iou(&[0.3], None).unwrap().mean, 0.3);
        assert_eq!(mean_iou(&[1.0, 0.5], None).unwrap().mean, 0.75);
        let cats: Vec<String> = ["A", "A", "B"].iter().map(|s| s.to_string()).collect();
        let m = mean_iou(&[0.9, 0.7, 0.5], Some(&cats)).unwrap();
        assert!((m.mean - 0.65).abs() < 1e-12);
        assert!((m.per_category["A"] - 0.8).abs() < 1e-12);
        assert!(mean_iou(&[], None).is_err());
    }
}
