//! Raw kernels: convolution via im2col + GEMM, pooling, and their adjoints.

/// `c = a * b + beta * c` for row-major `c` (`m x n`), with arbitrary
/// strides on `a` (`m x k`) and `b` (`k x n`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: callers pass slices covering every index reachable with the
    // given dimensions and strides; `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a 'same'-padded (possibly strided, dilated) convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub dilation: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(cin: usize, h: usize, w: usize, k: usize, stride: usize, dilation: usize) -> Self {
        let pad = dilation * (k - 1) / 2;
        let span = dilation * (k - 1) + 1;
        let ho = (h + 2 * pad - span) / stride + 1;
        let wo = (w + 2 * pad - span) / stride + 1;
        ConvGeom {
            cin,
            h,
            w,
            k,
            stride,
            dilation,
            pad,
            ho,
            wo,
        }
    }

    pub fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    pub fn cols(&self) -> usize {
        self.ho * self.wo
    }

    /// A 1x1 unit-stride convolution reads its input directly as the column matrix.
    pub fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1
    }
}

pub(crate) fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    if g.is_pointwise() {
        return x.to_vec();
    }
    let cols = g.cols();
    let mut out = vec![0.0; g.rows() * cols];
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut out[row * cols..(row + 1) * cols];
                let off_y = (ky * g.dilation) as isize - g.pad as isize;
                let off_x = (kx * g.dilation) as isize - g.pad as isize;
                for oy in 0..g.ho {
                    let iy = (oy * g.stride) as isize + off_y;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let d = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    for (ox, v) in d.iter_mut().enumerate() {
                        let ix = (ox * g.stride) as isize + off_x;
                        if ix >= 0 && ix < g.w as isize {
                            *v = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn col2im(col: &[f64], g: &ConvGeom) -> Vec<f64> {
    if g.is_pointwise() {
        return col.to_vec();
    }
    let cols = g.cols();
    let mut out = vec![0.0; g.cin * g.h * g.w];
    for c in 0..g.cin {
        let plane = &mut out[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &col[row * cols..(row + 1) * cols];
                let off_y = (ky * g.dilation) as isize - g.pad as isize;
                let off_x = (kx * g.dilation) as isize - g.pad as isize;
                for oy in 0..g.ho {
                    let iy = (oy * g.stride) as isize + off_y;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride) as isize + off_x;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
    out
}

/// `out[co, p] = sum_r weight[co, r] * col[r, p] + bias[co]`.
pub(crate) fn conv_apply(weight: &[f64], bias: &[f64], col: &[f64], g: &ConvGeom) -> Vec<f64> {
    let cout = bias.len();
    let (k, n) = (g.rows(), g.cols());
    let mut out = vec![0.0; cout * n];
    for (co, row) in out.chunks_exact_mut(n).enumerate() {
        row.fill(bias[co]);
    }
    gemm(cout, k, n, weight, k, 1, col, n, 1, 1.0, &mut out);
    out
}

/// Weight, bias and input gradients of [`conv_apply`].
pub(crate) fn conv_adjoint(
    weight: &[f64],
    col: &[f64],
    gy: &[f64],
    g: &ConvGeom,
    cout: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (k, n) = (g.rows(), g.cols());
    let mut dw = vec![0.0; cout * k];
    // dW = gy * col^T
    gemm(cout, n, k, gy, n, 1, col, 1, n, 0.0, &mut dw);
    let db: Vec<f64> = gy.chunks_exact(n).map(|r| r.iter().sum()).collect();
    // dcol = W^T * gy
    let mut dcol = vec![0.0; k * n];
    gemm(k, cout, n, weight, 1, k, gy, n, 1, 0.0, &mut dcol);
    (dw, db, col2im(&dcol, g))
}

/// Bin `[start, end)` of adaptive pooling cell `i` out of `cells` over `len`.
pub(crate) fn adaptive_bin(i: usize, cells: usize, len: usize) -> (usize, usize) {
    let start = i * len / cells;
    let end = ((i + 1) * len).div_ceil(cells);
    (start, end)
}

pub(crate) fn adaptive_avg_pool(x: &[f64], c: usize, h: usize, w: usize, grid: usize) -> Vec<f64> {
    let mut out = vec![0.0; c * grid * grid];
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for gy in 0..grid {
            let (y0, y1) = adaptive_bin(gy, grid, h);
            for gx in 0..grid {
                let (x0, x1) = adaptive_bin(gx, grid, w);
                let mut s = 0.0;
                for y in y0..y1 {
                    s += plane[y * w + x0..y * w + x1].iter().sum::<f64>();
                }
                out[(ch * grid + gy) * grid + gx] = s / ((y1 - y0) * (x1 - x0)) as f64;
            }
        }
    }
    out
}

pub(crate) fn adaptive_avg_pool_adjoint(
    g: &[f64],
    c: usize,
    h: usize,
    w: usize,
    grid: usize,
    dx: &mut [f64],
) {
    for ch in 0..c {
        let plane = &mut dx[ch * h * w..(ch + 1) * h * w];
        for gy in 0..grid {
            let (y0, y1) = adaptive_bin(gy, grid, h);
            for gx in 0..grid {
                let (x0, x1) = adaptive_bin(gx, grid, w);
                let share = g[(ch * grid + gy) * grid + gx] / ((y1 - y0) * (x1 - x0)) as f64;
                for y in y0..y1 {
                    for v in &mut plane[y * w + x0..y * w + x1] {
                        *v += share;
                    }
                }
            }
        }
    }
}

/// Max pooling without padding; returns outputs and the flat argmax of each.
pub(crate) fn max_pool(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    size: usize,
    stride: usize,
) -> (Vec<f64>, Vec<usize>, usize, usize) {
    let ho = (h - size) / stride + 1;
    let wo = (w - size) / stride + 1;
    let mut out = vec![0.0; c * ho * wo];
    let mut arg = vec![0; c * ho * wo];
    for ch in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = f64::NEG_INFINITY;
                let mut at = 0;
                for ky in 0..size {
                    for kx in 0..size {
                        let i = (ch * h + oy * stride + ky) * w + ox * stride + kx;
                        if x[i] > best {
                            best = x[i];
                            at = i;
                        }
                    }
                }
                let o = (ch * ho + oy) * wo + ox;
                out[o] = best;
                arg[o] = at;
            }
        }
    }
    (out, arg, ho, wo)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution used as the reference.
    fn conv_naive(x: &[f64], w: &[f64], b: &[f64], g: &ConvGeom) -> Vec<f64> {
        let cout = b.len();
        let mut out = vec![0.0; cout * g.ho * g.wo];
        for co in 0..cout {
            for oy in 0..g.ho {
                for ox in 0..g.wo {
                    let mut s = b[co];
                    for ci in 0..g.cin {
                        for ky in 0..g.k {
                            for kx in 0..g.k {
                                let iy =
                                    (oy * g.stride + ky * g.dilation) as isize - g.pad as isize;
                                let ix =
                                    (ox * g.stride + kx * g.dilation) as isize - g.pad as isize;
                                if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                    continue;
                                }
                                s += w[((co * g.cin + ci) * g.k + ky) * g.k + kx]
                                    * x[(ci * g.h + iy as usize) * g.w + ix as usize];
                            }
                        }
                    }
                    out[(co * g.ho + oy) * g.wo + ox] = s;
                }
            }
        }
        out
    }

    #[test]
    fn im2col_gemm_matches_naive_loops() {
        for &(stride, dilation, k) in &[
            (1, 1, 3),
            (2, 1, 3),
            (1, 2, 3),
            (1, 4, 3),
            (2, 1, 1),
            (1, 1, 1),
        ] {
            let g = ConvGeom::new(3, 9, 7, k, stride, dilation);
            let x: Vec<f64> = (0..3 * 9 * 7)
                .map(|i| ((i * 37 % 11) as f64) - 5.0)
                .collect();
            let w: Vec<f64> = (0..2 * g.rows())
                .map(|i| ((i * 13 % 7) as f64) * 0.25)
                .collect();
            let b = vec![0.5, -1.0];
            let fast = conv_apply(&w, &b, &im2col(&x, &g), &g);
            let slow = conv_naive(&x, &w, &b, &g);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-9);
            }
            assert_eq!(g.ho, 9usize.div_ceil(stride));
            assert_eq!(g.wo, 7usize.div_ceil(stride));
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = ConvGeom::new(2, 6, 5, 3, 2, 2);
        let x: Vec<f64> = (0..60).map(|i| (i as f64 * 0.7).sin()).collect();
        let y: Vec<f64> = (0..g.rows() * g.cols())
            .map(|i| (i as f64 * 0.3).cos())
            .collect();
        let lhs: f64 = im2col(&x, &g).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(col2im(&y, &g)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn adaptive_bins_cover_the_axis() {
        for len in 1..20 {
            for cells in 1..=len.min(7) {
                let (s, _) = adaptive_bin(0, cells, len);
                let (_, e) = adaptive_bin(cells - 1, cells, len);
                assert_eq!((s, e), (0, len));
                for i in 0..cells {
                    let (a, b) = adaptive_bin(i, cells, len);
                    assert!(a < b);
                }
            }
        }
    }
}
