//! Connected components, exact Euclidean distance transform and object
//! boundaries on binary masks.

use std::collections::VecDeque;

use crate::geometry::Point;
use crate::raster::BinaryMask;

/// 4-connected component labelling. Returns per-pixel labels (0 for
/// background, components numbered from 1 in row-major discovery order) and
/// the size of each component (`sizes[label - 1]`).
pub fn label_components(mask: &BinaryMask) -> (Vec<u32>, Vec<usize>) {
    let (w, h) = (mask.width(), mask.height());
    let bits = mask.bits();
    let mut labels = vec![0u32; w * h];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if bits[start] == 0 || labels[start] != 0 {
            continue;
        }
        let label = sizes.len() as u32 + 1;
        labels[start] = label;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if bits[j] == 1 && labels[j] == 0 {
                    labels[j] = label;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

/// 1D squared distance transform of a sampled function (lower envelope of
/// parabolas).
fn edt_1d(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    // first finite site
    let Some(first) = f.iter().position(|x| x.is_finite()) else {
        out.fill(f64::INFINITY);
        return;
    };
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in first + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            let p = v[k];
            let s =
                ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] {
                k -= 1;
                continue;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
            break;
        }
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Squared Euclidean distance from every pixel to the nearest pixel where
/// `site` is true. Returns `INFINITY` everywhere if there are no sites.
pub fn squared_distance_to(
    width: usize,
    height: usize,
    site: impl Fn(usize, usize) -> bool,
) -> Vec<f64> {
    let mut grid = vec![f64::INFINITY; width * height];
    for y in 0..height {
        for x in 0..width {
            if site(x, y) {
                grid[y * width + x] = 0.0;
            }
        }
    }
    let mut col_in = vec![0.0; height];
    let mut col_out = vec![0.0; height];
    for x in 0..width {
        for y in 0..height {
            col_in[y] = grid[y * width + x];
        }
        edt_1d(&col_in, &mut col_out);
        for y in 0..height {
            grid[y * width + x] = col_out[y];
        }
    }
    let mut row_out = vec![0.0; width];
    for y in 0..height {
        edt_1d(&grid[y * width..(y + 1) * width], &mut row_out);
        grid[y * width..(y + 1) * width].copy_from_slice(&row_out);
    }
    grid
}

/// Depth of each pixel of `region`: squared distance to the nearest pixel
/// outside it, where everything beyond the frame counts as outside.
pub fn squared_depth(region: &BinaryMask) -> Vec<f64> {
    let (w, h) = (region.width(), region.height());
    let padded = squared_distance_to(w + 2, h + 2, |x, y| {
        x == 0 || y == 0 || x == w + 1 || y == h + 1 || !region.get(x - 1, y - 1)
    });
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = padded[(y + 1) * (w + 2) + x + 1];
        }
    }
    out
}

/// Foreground pixels with at least one 4-neighbour in the background (pixels
/// beyond the frame count as background). Row-major order.
pub fn is_boundary(mask: &BinaryMask, x: usize, y: usize) -> bool {
    let (xi, yi) = (x as i64, y as i64);
    mask.get(x, y)
        && [(-1, 0), (1, 0), (0, -1), (0, 1)]
            .iter()
            .any(|(dx, dy)| !mask.get_signed(xi + dx, yi + dy))
}

pub fn boundary_pixels(mask: &BinaryMask) -> Vec<Point> {
    mask.foreground()
        .filter(|&(x, y)| is_boundary(mask, x, y))
        .map(|(x, y)| Point::new(x as i64, y as i64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn components_and_sizes() {
        let m = BinaryMask::from_bits(
            5,
            3,
            vec![
                1, 1, 0, 0, 1, //
                0, 1, 0, 1, 1, //
                1, 0, 0, 0, 0,
            ],
        )
        .unwrap();
        let (labels, sizes) = label_components(&m);
        assert_eq!(sizes, vec![3, 3, 1]);
        assert_eq!(labels[0], 1);
        assert_eq!(labels[4], 2);
        assert_eq!(labels[10], 3);
    }

    #[test]
    fn edt_matches_brute_force() {
        let (w, h) = (13, 9);
        let site = |x: usize, y: usize| (x * 7 + y * 3) % 11 == 0;
        let d = squared_distance_to(w, h, site);
        for y in 0..h {
            for x in 0..w {
                let mut best = f64::INFINITY;
                for sy in 0..h {
                    for sx in 0..w {
                        if site(sx, sy) {
                            let dd = ((x as f64 - sx as f64).powi(2)
                                + (y as f64 - sy as f64).powi(2))
                                as f64;
                            best = best.min(dd);
                        }
                    }
                }
                assert_eq!(d[y * w + x], best, "({},{})", x, y);
            }
        }
        assert!(squared_distance_to(3, 3, |_, _| false)
            .iter()
            .all(|v| v.is_infinite()));
    }

    #[test]
    fn depth_treats_frame_edge_as_outside() {
        let full = BinaryMask::from_fn(5, 5, |_, _| true);
        let d = squared_depth(&full);
        assert_eq!(d[2 * 5 + 2], 9.0);
        assert_eq!(d[0], 1.0);
    }

    #[test]
    fn boundary_of_square() {
        let m = BinaryMask::from_fn(6, 6, |x, y| (1..5).contains(&x) && (1..5).contains(&y));
        let b = boundary_pixels(&m);
        assert_eq!(b.len(), 12);
        assert!(!b.contains(&Point::new(2, 2)));
        assert!(b.contains(&Point::new(1, 1)));
    }
}
