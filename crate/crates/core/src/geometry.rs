//! Extreme points, bounding boxes and the crop-and-relax transform between
//! the full-image frame and the network's `R x R` crop frame.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{resize_bilinear, resize_nearest, BinaryMask, Raster};
use crate::tensor::Tensor;

/// Pixel coordinate; serialized as `[x, y]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[i64; 2]", into = "[i64; 2]")]
pub struct Point {
    pub x: i64,
    pub y: i64,
}

impl Point {
    pub const fn new(x: i64, y: i64) -> Self {
        Point { x, y }
    }

    pub fn dist2(&self, other: &Point) -> i64 {
        let (dx, dy) = (self.x - other.x, self.y - other.y);
        dx * dx + dy * dy
    }

    pub fn in_frame(&self, width: usize, height: usize) -> bool {
        self.x >= 0 && self.y >= 0 && (self.x as usize) < width && (self.y as usize) < height
    }
}

impl From<[i64; 2]> for Point {
    fn from([x, y]: [i64; 2]) -> Self {
        Point { x, y }
    }
}

impl From<Point> for [i64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

/// The four extreme clicks of an object plus an optional corrective click.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtremePointSet {
    pub left: Point,
    pub right: Point,
    pub top: Point,
    pub bottom: Point,
    #[serde(default)]
    pub extra: Option<Point>,
}

impl ExtremePointSet {
    pub fn corners(&self) -> [Point; 4] {
        [self.left, self.right, self.top, self.bottom]
    }

    /// The four extreme points followed by the extra click, if any.
    pub fn all(&self) -> Vec<Point> {
        let mut v = self.corners().to_vec();
        v.extend(self.extra);
        v
    }

    pub fn is_ordered(&self) -> bool {
        self.left.x <= self.right.x && self.top.y <= self.bottom.y
    }

    /// First point (by role order) outside a `width x height` frame.
    pub fn out_of_frame(&self, width: usize, height: usize) -> Option<(&'static str, Point)> {
        let named = [
            ("left", Some(self.left)),
            ("right", Some(self.right)),
            ("top", Some(self.top)),
            ("bottom", Some(self.bottom)),
            ("extra", self.extra),
        ];
        named
            .into_iter()
            .filter_map(|(n, p)| p.map(|p| (n, p)))
            .find(|(_, p)| !p.in_frame(width, height))
    }
}

/// Inclusive pixel box; may extend past the image after relaxation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
}

impl BoundingBox {
    pub const fn new(x0: i64, y0: i64, x1: i64, y1: i64) -> Self {
        BoundingBox { x0, y0, x1, y1 }
    }

    pub fn full(width: usize, height: usize) -> Self {
        BoundingBox::new(0, 0, width as i64 - 1, height as i64 - 1)
    }

    pub fn width(&self) -> i64 {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> i64 {
        self.y1 - self.y0 + 1
    }

    pub fn is_valid(&self) -> bool {
        self.x0 <= self.x1 && self.y0 <= self.y1
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x0 && p.x <= self.x1 && p.y >= self.y0 && p.y <= self.y1
    }

    /// Intersection with a `width x height` frame, if non-empty.
    pub fn clip(&self, width: usize, height: usize) -> Option<BoundingBox> {
        let b = BoundingBox::new(
            self.x0.max(0),
            self.y0.max(0),
            self.x1.min(width as i64 - 1),
            self.y1.min(height as i64 - 1),
        );
        b.is_valid().then_some(b)
    }
}

/// Tight bounding box of the foreground, `None` for an empty mask.
pub fn tight_box(mask: &BinaryMask) -> Option<BoundingBox> {
    let mut b: Option<BoundingBox> = None;
    for (x, y) in mask.foreground() {
        let (x, y) = (x as i64, y as i64);
        b = Some(match b {
            None => BoundingBox::new(x, y, x, y),
            Some(b) => BoundingBox::new(b.x0.min(x), b.y0.min(y), b.x1.max(x), b.y1.max(y)),
        });
    }
    b
}

fn lower_median(mut v: Vec<i64>) -> i64 {
    v.sort_unstable();
    v[(v.len() - 1) / 2]
}

/// Extreme foreground pixels of a mask. Among pixels tied on the extremal
/// coordinate, the one at the lower median of the other coordinate wins.
pub fn extreme_points_from_mask(mask: &BinaryMask) -> Result<ExtremePointSet> {
    let b = tight_box(mask).ok_or(Error::EmptyMask)?;
    let (mut left, mut right, mut top, mut bottom) = (vec![], vec![], vec![], vec![]);
    for (x, y) in mask.foreground() {
        let (x, y) = (x as i64, y as i64);
        if x == b.x0 {
            left.push(y);
        }
        if x == b.x1 {
            right.push(y);
        }
        if y == b.y0 {
            top.push(x);
        }
        if y == b.y1 {
            bottom.push(x);
        }
    }
    Ok(ExtremePointSet {
        left: Point::new(b.x0, lower_median(left)),
        right: Point::new(b.x1, lower_median(right)),
        top: Point::new(lower_median(top), b.y0),
        bottom: Point::new(lower_median(bottom), b.y1),
        extra: None,
    })
}

/// Perturb each coordinate of the four extreme points by an independent
/// uniform integer in `[-radius, radius]`, clamp into `bounds`, and swap
/// left/right or top/bottom if the perturbation crossed them. The extra
/// point, if any, is left untouched.
pub fn jitter_points<R: Rng + ?Sized>(
    points: &ExtremePointSet,
    radius: u32,
    rng: &mut R,
    bounds: BoundingBox,
) -> ExtremePointSet {
    if radius == 0 {
        return *points;
    }
    let r = radius as i64;
    let mut shake = |p: Point| {
        let dx = rng.gen_range(-r..=r);
        let dy = rng.gen_range(-r..=r);
        Point::new(
            (p.x + dx).clamp(bounds.x0, bounds.x1),
            (p.y + dy).clamp(bounds.y0, bounds.y1),
        )
    };
    let mut out = ExtremePointSet {
        left: shake(points.left),
        right: shake(points.right),
        top: shake(points.top),
        bottom: shake(points.bottom),
        extra: points.extra,
    };
    if out.left.x > out.right.x {
        std::mem::swap(&mut out.left, &mut out.right);
    }
    if out.top.y > out.bottom.y {
        std::mem::swap(&mut out.top, &mut out.bottom);
    }
    out
}

pub fn box_from_points(points: &ExtremePointSet) -> BoundingBox {
    BoundingBox::new(points.left.x, points.top.y, points.right.x, points.bottom.y)
}

pub fn relax_box(b: BoundingBox, margin: u32) -> BoundingBox {
    let m = margin as i64;
    BoundingBox::new(b.x0 - m, b.y0 - m, b.x1 + m, b.y1 + m)
}

pub const MIN_CROP_RESOLUTION: usize = 16;

/// A source box (zero-padded outside the image) resampled to `R x R`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropSpec {
    pub bbox: BoundingBox,
    pub resolution: usize,
}

impl CropSpec {
    pub fn new(bbox: BoundingBox, resolution: usize) -> Result<Self> {
        if !bbox.is_valid() {
            return Err(Error::Invalid(format!("crop box {:?} has zero area", bbox)));
        }
        if resolution < MIN_CROP_RESOLUTION {
            return Err(Error::Invalid(format!(
                "crop resolution {} is below {}",
                resolution, MIN_CROP_RESOLUTION
            )));
        }
        Ok(CropSpec { bbox, resolution })
    }

    /// Image-frame point to the nearest crop-frame pixel (clamped into the crop).
    pub fn to_crop(&self, p: Point) -> Point {
        let r = self.resolution as f64;
        let map = |v: i64, origin: i64, extent: i64| {
            let u = (v - origin) as f64 + 0.5;
            let c = (u * r / extent as f64 - 0.5).round();
            c.clamp(0.0, r - 1.0) as i64
        };
        Point::new(
            map(p.x, self.bbox.x0, self.bbox.width()),
            map(p.y, self.bbox.y0, self.bbox.height()),
        )
    }

    /// Crop-frame pixel centre back to image-frame (continuous) coordinates.
    pub fn to_image(&self, cx: f64, cy: f64) -> (f64, f64) {
        let r = self.resolution as f64;
        (
            self.bbox.x0 as f64 + (cx + 0.5) * self.bbox.width() as f64 / r - 0.5,
            self.bbox.y0 as f64 + (cy + 0.5) * self.bbox.height() as f64 / r - 0.5,
        )
    }
}

/// Extract `bbox` from a `[C,H,W]` tensor, reading zeros outside the frame.
fn extract_padded(t: &Tensor, bbox: BoundingBox) -> Result<Tensor> {
    let (c, h, w) = t.dims3()?;
    let (bw, bh) = (bbox.width() as usize, bbox.height() as usize);
    let mut out = vec![0.0; c * bw * bh];
    if let Some(inner) = bbox.clip(w, h) {
        let src = t.data();
        for ch in 0..c {
            for y in inner.y0..=inner.y1 {
                let sy = y as usize;
                let dy = (y - bbox.y0) as usize;
                for x in inner.x0..=inner.x1 {
                    out[(ch * bh + dy) * bw + (x - bbox.x0) as usize] =
                        src[(ch * h + sy) * w + x as usize];
                }
            }
        }
    }
    Tensor::from_vec(&[c, bh, bw], out)
}

/// Crop a `[C,H,W]` tensor: zero-padded extraction, bilinear resize to `R x R`.
pub fn crop_tensor(t: &Tensor, spec: &CropSpec) -> Result<Tensor> {
    let patch = extract_padded(t, spec.bbox)?;
    resize_bilinear(&patch, spec.resolution, spec.resolution)
}

/// Crop a raster into a `[C,R,R]` tensor of raw sample values.
pub fn crop_raster(r: &Raster, spec: &CropSpec) -> Result<Tensor> {
    crop_tensor(&r.to_tensor(), spec)
}

/// Crop a mask with nearest-neighbour resampling so it stays binary.
pub fn crop_mask(m: &BinaryMask, spec: &CropSpec) -> Result<BinaryMask> {
    let b = spec.bbox;
    let (bw, bh) = (b.width() as usize, b.height() as usize);
    let patch = BinaryMask::from_fn(bw, bh, |x, y| {
        m.get_signed(b.x0 + x as i64, b.y0 + y as i64)
    });
    resize_nearest(&patch, spec.resolution, spec.resolution)
}

/// Project an `R x R` probability map back into a `full_w x full_h` frame
/// (`[1,H,W]`): bilinear resize onto the crop box, zero elsewhere.
pub fn uncrop_prob(pred: &Tensor, spec: &CropSpec, full_w: usize, full_h: usize) -> Result<Tensor> {
    let r = spec.resolution;
    let plane = match pred.shape() {
        [1, h, w] | [h, w] if *h == r && *w == r => pred.clone().reshape(&[1, r, r])?,
        s => {
            return Err(Error::Shape(format!(
                "prediction {:?} does not match crop resolution {}",
                s, r
            )))
        }
    };
    let b = spec.bbox;
    let (bw, bh) = (b.width() as usize, b.height() as usize);
    let back = resize_bilinear(&plane, bh, bw)?;
    let mut out = vec![0.0; full_w * full_h];
    if let Some(inner) = b.clip(full_w, full_h) {
        let data = back.data();
        for y in inner.y0..=inner.y1 {
            for x in inner.x0..=inner.x1 {
                out[y as usize * full_w + x as usize] =
                    data[(y - b.y0) as usize * bw + (x - b.x0) as usize];
            }
        }
    }
    Tensor::from_vec(&[1, full_h, full_w], out)
}

/// Binarize a probability map at `>= threshold`.
pub fn threshold_prob(prob: &Tensor, threshold: f64) -> Result<BinaryMask> {
    let (h, w) = match prob.shape() {
        [1, h, w] | [h, w] => (*h, *w),
        s => {
            return Err(Error::Shape(format!(
                "probability map {:?} is not a plane",
                s
            )))
        }
    };
    let bits = prob
        .data()
        .iter()
        .map(|&v| (v >= threshold) as u8)
        .collect();
    BinaryMask::from_bits(w, h, bits)
}

/// [`uncrop_prob`] followed by [`threshold_prob`].
pub fn uncrop_mask(
    pred: &Tensor,
    spec: &CropSpec,
    full_w: usize,
    full_h: usize,
    threshold: f64,
) -> Result<BinaryMask> {
    threshold_prob(&uncrop_prob(pred, spec, full_w, full_h)?, threshold)
}
