use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, Raster};
use crate::trainer::Sample;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Ellipse,
    Rectangle,
    Triangle,
    Blob,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub count: usize,
    pub width: usize,
    pub height: usize,
    pub kinds: Vec<ShapeKind>,
    /// Per-channel range of object colours.
    pub fg_range: [u8; 2],
    /// Per-channel range of background base colours.
    pub bg_range: [u8; 2],
    pub noise_std: f64,
    pub min_area_fraction: f64,
    pub max_area_fraction: f64,
    /// Extra shapes painted behind the object.
    pub distractors: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            count: 100,
            width: 64,
            height: 64,
            kinds: vec![
                ShapeKind::Ellipse,
                ShapeKind::Rectangle,
                ShapeKind::Triangle,
                ShapeKind::Blob,
            ],
            fg_range: [40, 215],
            bg_range: [40, 215],
            noise_std: 12.0,
            min_area_fraction: 0.02,
            max_area_fraction: 0.25,
            distractors: 2,
            seed: 0,
        }
    }
}

const MAX_TRIES: usize = 1000;

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(m.to_string()));
        if self.width < 8 || self.height < 8 {
            return bad("synthetic images must be at least 8x8");
        }
        if self.kinds.is_empty() {
            return bad("at least one shape kind is required");
        }
        if self.fg_range[0] > self.fg_range[1] || self.bg_range[0] > self.bg_range[1] {
            return bad("colour ranges must be ordered");
        }
        if !(self.noise_std >= 0.0) {
            return bad("noise std must be non-negative");
        }
        if !(self.min_area_fraction > 0.0
            && self.min_area_fraction <= self.max_area_fraction
            && self.max_area_fraction <= 1.0)
        {
            return bad("area fractions must satisfy 0 < min <= max <= 1");
        }
        Ok(())
    }
}

/// A filled shape tested at pixel centres.
#[derive(Clone, Debug)]
enum Shape {
    Ellipse {
        cx: f64,
        cy: f64,
        a: f64,
        b: f64,
        theta: f64,
    },
    Polygon(Vec<(f64, f64)>),
}

impl Shape {
    fn contains(&self, px: f64, py: f64) -> bool {
        match self {
            Shape::Ellipse {
                cx,
                cy,
                a,
                b,
                theta,
            } => {
                let (dx, dy) = (px - cx, py - cy);
                let (s, c) = theta.sin_cos();
                let u = (c * dx + s * dy) / a;
                let v = (-s * dx + c * dy) / b;
                u * u + v * v <= 1.0
            }
            Shape::Polygon(pts) => {
                let mut inside = false;
                let n = pts.len();
                for i in 0..n {
                    let (xi, yi) = pts[i];
                    let (xj, yj) = pts[(i + n - 1) % n];
                    if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
                        inside = !inside;
                    }
                }
                inside
            }
        }
    }

    fn random<R: Rng>(kind: ShapeKind, w: f64, h: f64, rng: &mut R) -> Shape {
        let scale = w.min(h);
        let cx = rng.gen_range(0.15 * w..0.85 * w);
        let cy = rng.gen_range(0.15 * h..0.85 * h);
        let theta = rng.gen_range(0.0..std::f64::consts::PI);
        match kind {
            ShapeKind::Ellipse => Shape::Ellipse {
                cx,
                cy,
                a: rng.gen_range(0.06..0.3) * scale,
                b: rng.gen_range(0.06..0.3) * scale,
                theta,
            },
            ShapeKind::Rectangle => {
                let (hw, hh) = (
                    rng.gen_range(0.06..0.3) * scale,
                    rng.gen_range(0.06..0.3) * scale,
                );
                let (s, c) = theta.sin_cos();
                let corners = [(-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)];
                Shape::Polygon(
                    corners
                        .iter()
                        .map(|&(x, y)| (cx + c * x - s * y, cy + s * x + c * y))
                        .collect(),
                )
            }
            ShapeKind::Triangle => {
                let r = rng.gen_range(0.12..0.35) * scale;
                let pts = (0..3)
                    .map(|k| {
                        let a = theta
                            + k as f64 * 2.0 * std::f64::consts::PI / 3.0
                            + rng.gen_range(-0.5..0.5);
                        let rr = r * rng.gen_range(0.6..1.0);
                        (cx + rr * a.cos(), cy + rr * a.sin())
                    })
                    .collect();
                Shape::Polygon(pts)
            }
            ShapeKind::Blob => {
                let n = rng.gen_range(6..11);
                let r = rng.gen_range(0.12..0.33) * scale;
                let pts = (0..n)
                    .map(|k| {
                        let a = theta + k as f64 * 2.0 * std::f64::consts::PI / n as f64;
                        let rr = r * rng.gen_range(0.35..1.0);
                        (cx + rr * a.cos(), cy + rr * a.sin())
                    })
                    .collect();
                Shape::Polygon(pts)
            }
        }
    }

    fn rasterize(&self, w: usize, h: usize) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| self.contains(x as f64 + 0.5, y as f64 + 0.5))
    }
}

fn touches_border(m: &BinaryMask) -> bool {
    let (w, h) = (m.width(), m.height());
    (0..w).any(|x| m.get(x, 0) || m.get(x, h - 1)) || (0..h).any(|y| m.get(0, y) || m.get(w - 1, y))
}

fn colour<R: Rng>(range: [u8; 2], rng: &mut R) -> [f64; 3] {
    let mut c = [0.0; 3];
    for v in &mut c {
        *v = rng.gen_range(range[0]..=range[1]) as f64;
    }
    c
}

/// One image: smooth two-colour gradient background with a sinusoidal
/// texture, distractor shapes, the object on top, Gaussian pixel noise.
fn generate_one<R: Rng>(cfg: &SynthConfig, rng: &mut R) -> Result<(Raster, BinaryMask)> {
    let (w, h) = (cfg.width, cfg.height);
    let area = (w * h) as f64;
    let (wf, hf) = (w as f64, h as f64);
    let mut object = None;
    for _ in 0..MAX_TRIES {
        let kind = cfg.kinds[rng.gen_range(0..cfg.kinds.len())];
        let shape = Shape::random(kind, wf, hf, rng);
        let mask = shape.rasterize(w, h);
        let frac = mask.count() as f64 / area;
        if frac >= cfg.min_area_fraction && frac <= cfg.max_area_fraction && !touches_border(&mask)
        {
            object = Some(mask);
            break;
        }
    }
    let mask = object
        .ok_or_else(|| Error::Invalid(format!("no admissible shape after {} tries", MAX_TRIES)))?;

    let c0 = colour(cfg.bg_range, rng);
    let c1 = colour(cfg.bg_range, rng);
    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let (freq, phase) = (
        rng.gen_range(0.1..0.5),
        rng.gen_range(0.0..std::f64::consts::TAU),
    );
    let amp = rng.gen_range(5.0..25.0);
    let mut pix = vec![[0.0f64; 3]; w * h];
    for y in 0..h {
        for x in 0..w {
            let (u, v) = (x as f64 / wf - 0.5, y as f64 / hf - 0.5);
            let t = (u * angle.cos() + v * angle.sin() + 0.5).clamp(0.0, 1.0);
            let tex = amp * ((x as f64 * freq + phase).sin() * (y as f64 * freq * 0.7).cos());
            for c in 0..3 {
                pix[y * w + x][c] = c0[c] * (1.0 - t) + c1[c] * t + tex;
            }
        }
    }
    let fg = colour(cfg.fg_range, rng);
    for _ in 0..cfg.distractors {
        let kind = cfg.kinds[rng.gen_range(0..cfg.kinds.len())];
        let shape = Shape::random(kind, wf, hf, rng);
        // distractors are drawn near the object colour half of the time
        let col = if rng.gen_bool(0.5) {
            let mut c = fg;
            for v in &mut c {
                *v = (*v + rng.gen_range(-30.0..30.0)).clamp(0.0, 255.0);
            }
            c
        } else {
            colour(cfg.fg_range, rng)
        };
        for y in 0..h {
            for x in 0..w {
                if shape.contains(x as f64 + 0.5, y as f64 + 0.5) {
                    pix[y * w + x] = col;
                }
            }
        }
    }
    for (x, y) in mask.foreground() {
        pix[y * w + x] = fg;
    }
    let noise = Normal::new(0.0, cfg.noise_std.max(1e-12)).expect("valid std");
    let mut data = Vec::with_capacity(w * h * 3);
    for p in &pix {
        for &v in p {
            let n = if cfg.noise_std > 0.0 {
                noise.sample(rng)
            } else {
                0.0
            };
            data.push((v + n).round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok((Raster::new(w, h, 3, data)?, mask))
}

/// Generate `cfg.count` samples with ids `000000`, `000001`, ...
pub fn generate_samples(cfg: &SynthConfig) -> Result<Vec<Sample>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.count)
        .map(|i| {
            let (image, mask) = generate_one(cfg, &mut rng)?;
            Sample::new(format!("{:06}", i), image, mask)
        })
        .collect()
}
