use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{ModelBundle, Sample};
use crate::error::{Error, Result};
use crate::geometry::{threshold_prob, Point};
use crate::objective::iou;
use crate::raster::BinaryMask;
use crate::regions::{is_boundary, label_components, squared_depth, squared_distance_to};
use crate::tensor::Tensor;

pub const DEFAULT_PERTURB_RADIUS: u32 = 3;
pub const DEFAULT_HARD_THRESHOLD: f64 = 0.8;
/// Maximum distance (px) of a perturbed click from the true boundary.
pub const BOUNDARY_BAND: f64 = 2.0;

const PERTURB_TRIES: usize = 64;

/// The corrective click a user would add: the ground-truth boundary pixel
/// nearest to the deepest pixel of the largest error region, perturbed by up
/// to `radius` px while staying within [`BOUNDARY_BAND`] of the boundary.
pub fn simulate_fifth_point<R: Rng + ?Sized>(
    pred: &Tensor,
    gt: &BinaryMask,
    rng: &mut R,
    radius: u32,
) -> Result<Point> {
    let binary = threshold_prob(pred, 0.5)?;
    if !binary.same_dims(gt) {
        return Err(Error::Shape(format!(
            "prediction is {}x{}, ground truth {}x{}",
            binary.width(),
            binary.height(),
            gt.width(),
            gt.height()
        )));
    }
    if gt.is_empty() {
        return Err(Error::EmptyMask);
    }
    let (w, h) = (gt.width(), gt.height());
    let errors = BinaryMask::from_fn(w, h, |x, y| binary.get(x, y) != gt.get(x, y));
    let (labels, sizes) = label_components(&errors);
    // first label wins ties, i.e. the component met first in row-major order
    let Some((largest, _)) =
        sizes
            .iter()
            .enumerate()
            .fold(None, |best: Option<(usize, usize)>, (i, &s)| match best {
                Some((_, bs)) if bs >= s => best,
                _ => Some((i, s)),
            })
    else {
        return Err(Error::NoRefinementNeeded);
    };
    let target = largest as u32 + 1;
    let region = BinaryMask::from_fn(w, h, |x, y| labels[y * w + x] == target);
    let depth = squared_depth(&region);
    let mut deepest = 0;
    for (i, &d) in depth.iter().enumerate() {
        if labels[i] == target && (labels[deepest] != target || d > depth[deepest]) {
            deepest = i;
        }
    }
    let deep = Point::new((deepest % w) as i64, (deepest / w) as i64);

    let mut nearest: Option<Point> = None;
    for (x, y) in gt.foreground() {
        if !is_boundary(gt, x, y) {
            continue;
        }
        let p = Point::new(x as i64, y as i64);
        if nearest.map_or(true, |q| p.dist2(&deep) < q.dist2(&deep)) {
            nearest = Some(p);
        }
    }
    let anchor = nearest.ok_or(Error::EmptyMask)?;
    if radius == 0 {
        return Ok(anchor);
    }

    let band = squared_distance_to(w, h, |x, y| is_boundary(gt, x, y));
    let r = radius as i64;
    for _ in 0..PERTURB_TRIES {
        let (dx, dy) = (rng.gen_range(-r..=r), rng.gen_range(-r..=r));
        if dx * dx + dy * dy > r * r {
            continue;
        }
        let p = Point::new(anchor.x + dx, anchor.y + dy);
        if p.in_frame(w, h)
            && band[p.y as usize * w + p.x as usize] <= BOUNDARY_BAND * BOUNDARY_BAND
        {
            return Ok(p);
        }
    }
    Ok(anchor)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HardExample {
    /// Position within the evaluated split.
    pub index: usize,
    pub id: String,
    pub iou: f64,
    pub fifth: Point,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HardExampleSet {
    pub threshold: f64,
    pub members: Vec<HardExample>,
}

impl HardExampleSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Indices whose IoU falls strictly below `threshold`.
pub fn hard_indices(ious: &[f64], threshold: f64) -> Vec<usize> {
    ious.iter()
        .enumerate()
        .filter(|(_, &v)| v < threshold)
        .map(|(i, _)| i)
        .collect()
}

/// Score every sample with zero-jitter clicks and keep those below
/// `threshold`, each with a simulated corrective click. The click noise of
/// sample `i` is drawn from a generator seeded with `seed + i`.
pub fn select_hard_examples(
    bundle: &ModelBundle,
    split: &[Sample],
    threshold: f64,
    perturb_radius: u32,
    seed: u64,
) -> Result<HardExampleSet> {
    let mut members = Vec::new();
    for (index, s) in split.iter().enumerate() {
        let points = s.extreme_points()?;
        let pred = bundle.predict(&s.image, &points)?;
        let score = iou(&pred.mask, &s.mask)?;
        if score < threshold {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(index as u64));
            let fifth = simulate_fifth_point(&pred.prob, &s.mask, &mut rng, perturb_radius)?;
            members.push(HardExample {
                index,
                id: s.id.clone(),
                iou: score,
                fifth,
            });
        }
    }
    Ok(HardExampleSet { threshold, members })
}
