//! Network input: cropped RGB scaled to `[0,1]` plus one guidance channel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceKind {
    /// No guidance channel: the crop alone (bounding-box input).
    None,
    /// Max-combined Gaussians centred on the clicks.
    Gaussian,
    /// Inverted, clipped Euclidean distance to the nearest click.
    Distance,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    pub kind: GuidanceKind,
    pub sigma: f64,
    pub amplitude: f64,
    /// Distance-map clip; `None` means the crop resolution.
    #[serde(default)]
    pub distance_clip: Option<f64>,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            kind: GuidanceKind::Gaussian,
            sigma: 10.0,
            amplitude: 1.0,
            distance_clip: None,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !(self.amplitude > 0.0) {
            return Err(Error::Invalid(format!(
                "guidance sigma ({}) and amplitude ({}) must be positive",
                self.sigma, self.amplitude
            )));
        }
        if let Some(d) = self.distance_clip {
            if !(d > 0.0) {
                return Err(Error::Invalid(format!(
                    "distance clip {} must be positive",
                    d
                )));
            }
        }
        Ok(())
    }

    /// Number of channels of the assembled input.
    pub fn input_channels(&self) -> usize {
        if self.kind == GuidanceKind::None {
            3
        } else {
            4
        }
    }
}

/// `[C,R,R]` network input, RGB first then guidance.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInput(pub Tensor);

impl ModelInput {
    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn channels(&self) -> usize {
        self.0.shape()[0]
    }
}

/// `h(q) = max_p exp(-|q-p|^2 / (2 sigma^2))`; all zeros for no points.
pub fn gaussian_heatmap(points: &[Point], resolution: usize, sigma: f64) -> Tensor {
    let r = resolution;
    let mut out = vec![0.0; r * r];
    let inv = 1.0 / (2.0 * sigma * sigma);
    for y in 0..r {
        for x in 0..r {
            let q = Point::new(x as i64, y as i64);
            let d2 = points.iter().map(|p| q.dist2(p)).min();
            if let Some(d2) = d2 {
                out[y * r + x] = (-(d2 as f64) * inv).exp();
            }
        }
    }
    Tensor::from_vec(&[1, r, r], out).expect("square map")
}

/// `1 - min(d, clip) / clip` where `d` is the distance to the nearest point.
pub fn distance_map(points: &[Point], resolution: usize, clip: f64) -> Result<Tensor> {
    if points.is_empty() {
        return Err(Error::Invalid(
            "distance map needs at least one point".into(),
        ));
    }
    let r = resolution;
    let mut out = vec![0.0; r * r];
    for y in 0..r {
        for x in 0..r {
            let q = Point::new(x as i64, y as i64);
            let d2 = points.iter().map(|p| q.dist2(p)).min().unwrap_or(0);
            let d = (d2 as f64).sqrt().min(clip);
            out[y * r + x] = 1.0 - d / clip;
        }
    }
    Tensor::from_vec(&[1, r, r], out)
}

/// Concatenate the scaled crop with the guidance channel for `points`
/// (crop-frame coordinates). Extra clicks share the single guidance channel.
pub fn assemble_input(
    crop_rgb: &Tensor,
    guidance: &GuidanceConfig,
    points: &[Point],
) -> Result<ModelInput> {
    let (c, h, w) = crop_rgb.dims3()?;
    if c != 3 || h != w {
        return Err(Error::Shape(format!(
            "crop must be [3,R,R], got {:?}",
            crop_rgb.shape()
        )));
    }
    guidance.validate()?;
    let rgb = crop_rgb.map(|v| v / 255.0);
    let map = match guidance.kind {
        GuidanceKind::None => return Ok(ModelInput(rgb)),
        GuidanceKind::Gaussian => {
            let mut g = gaussian_heatmap(points, h, guidance.sigma);
            if guidance.amplitude != 1.0 {
                g = g.map(|v| v * guidance.amplitude);
            }
            g
        }
        GuidanceKind::Distance => {
            distance_map(points, h, guidance.distance_clip.unwrap_or(h as f64))?
        }
    };
    Ok(ModelInput(Tensor::concat_channels(&[&rgb, &map])?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_closed_form_values() {
        let p = Point::new(20, 20);
        let g = gaussian_heatmap(&[p], 64, 10.0);
        assert_eq!(g.at3(0, 20, 20), 1.0);
        assert!((g.at3(0, 20, 30) - (-0.5f64).exp()).abs() < 1e-15);
        assert!((g.at3(0, 20, 30) - 0.60653).abs() < 1e-5);
        assert_eq!(gaussian_heatmap(&[p, p], 64, 10.0), g);
        assert!(gaussian_heatmap(&[], 16, 3.0)
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn gaussian_is_permutation_invariant_and_shift_equivariant() {
        let pts = [Point::new(3, 4), Point::new(20, 9), Point::new(11, 25)];
        let rev: Vec<Point> = pts.iter().rev().copied().collect();
        assert_eq!(
            gaussian_heatmap(&pts, 32, 4.0),
            gaussian_heatmap(&rev, 32, 4.0)
        );
        let shifted: Vec<Point> = pts.iter().map(|p| Point::new(p.x + 2, p.y + 3)).collect();
        let a = gaussian_heatmap(&pts, 32, 4.0);
        let b = gaussian_heatmap(&shifted, 32, 4.0);
        for y in 0..29 {
            for x in 0..30 {
                assert_eq!(a.at3(0, y, x), b.at3(0, y + 3, x + 2));
            }
        }
    }

    #[test]
    fn distance_map_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let pts = [
            Point::new(2, 5),
            Point::new(40, 7),
            Point::new(30, 44),
            Point::new(9, 60),
        ];
        let r = 64;
        let m = distance_map(&pts, r, r as f64).unwrap();
        for p in &pts {
            assert_eq!(m.at3(0, p.y as usize, p.x as usize), 1.0);
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let (x, y) = (rng.gen_range(0..r), rng.gen_range(0..r));
            let mut best = f64::INFINITY;
            for p in &pts {
                let d = ((x as f64 - p.x as f64).powi(2) + (y as f64 - p.y as f64).powi(2)).sqrt();
                best = best.min(d);
            }
            let expected = 1.0 - best.min(r as f64) / r as f64;
            assert!((m.at3(0, y, x) - expected).abs() < 1e-12);
        }
        let far = distance_map(&[Point::new(0, 0)], 16, 5.0).unwrap();
        assert_eq!(far.at3(0, 15, 15), 0.0);
        assert!(distance_map(&[], 16, 5.0).is_err());
    }

    #[test]
    fn assemble_variants() {
        let rgb = Tensor::full(&[3, 16, 16], 255.0);
        let none = GuidanceConfig {
            kind: GuidanceKind::None,
            ..Default::default()
        };
        let x = assemble_input(&rgb, &none, &[]).unwrap();
        assert_eq!(x.channels(), 3);
        assert!(x.0.data().iter().all(|&v| v == 1.0));

        let pts = [
            Point::new(1, 1),
            Point::new(14, 2),
            Point::new(7, 0),
            Point::new(8, 15),
        ];
        let cfg = GuidanceConfig {
            sigma: 3.0,
            ..Default::default()
        };
        let x = assemble_input(&rgb, &cfg, &pts).unwrap();
        assert_eq!(x.channels(), 4);
        assert_eq!(x.0.channel(3).unwrap(), gaussian_heatmap(&pts, 16, 3.0));

        // fifth click lands in the same channel, combined by max
        let extra = Point::new(12, 12);
        let mut five = pts.to_vec();
        five.push(extra);
        let x5 = assemble_input(&rgb, &cfg, &five).unwrap();
        assert_eq!(x5.channels(), 4);
        let four = gaussian_heatmap(&pts, 16, 3.0);
        let one = gaussian_heatmap(&[extra], 16, 3.0);
        let g5 = x5.0.channel(3).unwrap();
        for i in 0..256 {
            assert_eq!(g5.data()[i], four.data()[i].max(one.data()[i]));
        }

        assert!(assemble_input(&Tensor::zeros(&[3, 16, 8]), &cfg, &pts).is_err());
    }
}
