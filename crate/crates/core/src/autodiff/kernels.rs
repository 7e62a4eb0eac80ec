//! Raw kernels behind the tape ops. Everything here works on flat
//! row-major slices; shape validation happens in `graph.rs`.

use rayon::prelude::*;

use super::tensor::Real;

/// Resolved geometry of one 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn col_rows(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    fn in_plane(&self) -> usize {
        self.in_channels * self.height * self.width
    }

    fn out_plane(&self) -> usize {
        self.out_channels * self.out_h * self.out_w
    }
}

/// Output columns `lo..hi` whose tap `kj` lands inside the input row
/// (stride 1 only).
fn valid_cols(kj: usize, g: &ConvGeom) -> (usize, usize) {
    let lo = g.pad_w.saturating_sub(kj).min(g.out_w);
    let hi = (g.width + g.pad_w).saturating_sub(kj).min(g.out_w).max(lo);
    (lo, hi)
}

/// Unfold one image `[C, H, W]` into columns `[C*kh*kw, out_h*out_w]`.
pub fn im2col<T: Real>(x: &[T], g: &ConvGeom, col: &mut [T]) {
    let cols = g.col_cols();
    for c in 0..g.in_channels {
        let plane = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                let dst = &mut col[row * cols..(row + 1) * cols];
                for oi in 0..g.out_h {
                    let ii = (oi * g.stride + ki) as isize - g.pad_h as isize;
                    let dst_row = &mut dst[oi * g.out_w..(oi + 1) * g.out_w];
                    if ii < 0 || ii as usize >= g.height {
                        dst_row.fill(T::zero());
                        continue;
                    }
                    let src = &plane[ii as usize * g.width..(ii as usize + 1) * g.width];
                    if g.stride == 1 {
                        let (lo, hi) = valid_cols(kj, g);
                        dst_row[..lo].fill(T::zero());
                        dst_row[hi..].fill(T::zero());
                        let start = lo + kj - g.pad_w;
                        dst_row[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                        continue;
                    }
                    for (oj, d) in dst_row.iter_mut().enumerate() {
                        let jj = (oj * g.stride + kj) as isize - g.pad_w as isize;
                        *d = if jj < 0 || jj as usize >= g.width { T::zero() } else { src[jj as usize] };
                    }
                }
            }
        }
    }
}

/// Fold columns back into an image, accumulating overlapping taps.
pub fn col2im<T: Real>(col: &[T], g: &ConvGeom, x: &mut [T]) {
    let cols = g.col_cols();
    for c in 0..g.in_channels {
        let plane = &mut x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                let src = &col[row * cols..(row + 1) * cols];
                for oi in 0..g.out_h {
                    let ii = (oi * g.stride + ki) as isize - g.pad_h as isize;
                    if ii < 0 || ii as usize >= g.height {
                        continue;
                    }
                    let dst = &mut plane[ii as usize * g.width..(ii as usize + 1) * g.width];
                    if g.stride == 1 {
                        let (lo, hi) = valid_cols(kj, g);
                        let start = lo + kj - g.pad_w;
                        let row = &src[oi * g.out_w + lo..oi * g.out_w + hi];
                        for (d, &v) in dst[start..start + hi - lo].iter_mut().zip(row) {
                            *d = *d + v;
                        }
                        continue;
                    }
                    for oj in 0..g.out_w {
                        let jj = (oj * g.stride + kj) as isize - g.pad_w as isize;
                        if jj >= 0 && (jj as usize) < g.width {
                            dst[jj as usize] = dst[jj as usize] + src[oi * g.out_w + oj];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Real>(x: &[T], w: &[T], g: &ConvGeom) -> Vec<T> {
    let mut out = vec![T::zero(); g.batch * g.out_plane()];
    let (rows, cols) = (g.col_rows(), g.col_cols());
    out.par_chunks_mut(g.out_plane()).zip(x.par_chunks(g.in_plane())).for_each_init(
        || vec![T::zero(); rows * cols],
        |col, (out_b, x_b)| {
            im2col(x_b, g, col);
            T::gemm(
                g.out_channels,
                rows,
                cols,
                T::one(),
                w,
                rows as isize,
                1,
                col,
                cols as isize,
                1,
                T::zero(),
                out_b,
                cols as isize,
                1,
            );
        },
    );
    out
}

/// Returns `(dx, dw)`; either may be skipped when the input does not need it.
pub fn conv2d_backward<T: Real>(
    x: &[T],
    w: &[T],
    dy: &[T],
    g: &ConvGeom,
    need_dx: bool,
    need_dw: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let wlen = g.out_channels * rows;

    let dx = need_dx.then(|| {
        let mut dx = vec![T::zero(); g.batch * g.in_plane()];
        dx.par_chunks_mut(g.in_plane()).zip(dy.par_chunks(g.out_plane())).for_each_init(
            || vec![T::zero(); rows * cols],
            |dcol, (dx_b, dy_b)| {
                // dcol = W^T dy
                T::gemm(
                    rows,
                    g.out_channels,
                    cols,
                    T::one(),
                    w,
                    1,
                    rows as isize,
                    dy_b,
                    cols as isize,
                    1,
                    T::zero(),
                    dcol,
                    cols as isize,
                    1,
                );
                col2im(dcol, g, dx_b);
            },
        );
        dx
    });

    let dw = need_dw.then(|| {
        // Per-sample partials reduced in batch order keep the sum deterministic.
        let partials: Vec<Vec<T>> = x
            .par_chunks(g.in_plane())
            .zip(dy.par_chunks(g.out_plane()))
            .map_init(
                || vec![T::zero(); rows * cols],
                |col, (x_b, dy_b)| {
                    im2col(x_b, g, col);
                    let mut part = vec![T::zero(); wlen];
                    T::gemm(
                        g.out_channels,
                        cols,
                        rows,
                        T::one(),
                        dy_b,
                        cols as isize,
                        1,
                        col,
                        1,
                        cols as isize,
                        T::zero(),
                        &mut part,
                        rows as isize,
                        1,
                    );
                    part
                },
            )
            .collect();
        let mut dw = vec![T::zero(); wlen];
        for p in &partials {
            for (a, &b) in dw.iter_mut().zip(p) {
                *a = *a + b;
            }
        }
        dw
    });

    (dx, dw)
}

/// Max pooling without padding. Returns the output and, per output element,
/// the flat input index that won (first index on ties).
pub fn maxpool2d_forward<T: Real>(
    x: &[T],
    shape: [usize; 4],
    window: usize,
    stride: usize,
) -> (Vec<T>, Vec<usize>, [usize; 2]) {
    let [b, c, h, w] = shape;
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let mut out = Vec::with_capacity(b * c * oh * ow);
    let mut arg = Vec::with_capacity(b * c * oh * ow);
    for plane in 0..b * c {
        let base = plane * h * w;
        for oi in 0..oh {
            for oj in 0..ow {
                let mut best = base + oi * stride * w + oj * stride;
                let mut best_v = x[best];
                for ki in 0..window {
                    for kj in 0..window {
                        let idx = base + (oi * stride + ki) * w + oj * stride + kj;
                        if x[idx] > best_v {
                            best_v = x[idx];
                            best = idx;
                        }
                    }
                }
                out.push(best_v);
                arg.push(best);
            }
        }
    }
    (out, arg, [oh, ow])
}

pub fn upsample_nearest<T: Real>(x: &[T], shape: [usize; 4], factor: usize) -> Vec<T> {
    let [b, c, h, w] = shape;
    let (oh, ow) = (h * factor, w * factor);
    let mut out = vec![T::zero(); b * c * oh * ow];
    for plane in 0..b * c {
        let src = &x[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
        for i in 0..oh {
            for j in 0..ow {
                dst[i * ow + j] = src[(i / factor) * w + j / factor];
            }
        }
    }
    out
}

pub fn upsample_nearest_backward<T: Real>(dy: &[T], shape: [usize; 4], factor: usize) -> Vec<T> {
    let [b, c, h, w] = shape;
    let (oh, ow) = (h * factor, w * factor);
    let mut dx = vec![T::zero(); b * c * h * w];
    for plane in 0..b * c {
        let src = &dy[plane * oh * ow..(plane + 1) * oh * ow];
        let dst = &mut dx[plane * h * w..(plane + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                let d = &mut dst[(i / factor) * w + j / factor];
                *d = *d + src[i * ow + j];
            }
        }
    }
    dx
}
