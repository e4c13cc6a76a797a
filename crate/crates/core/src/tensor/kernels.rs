//! Slice-level forward/backward kernels. Shapes are validated by the callers.

use super::{strides, Element};

/// Zero padding applied around the spatial dims of a convolution input.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub const NONE: Padding = Padding::uniform(0);

    pub const fn uniform(p: usize) -> Self {
        Padding {
            top: p,
            bottom: p,
            left: p,
            right: p,
        }
    }

    pub const fn new(top: usize, bottom: usize, left: usize, right: usize) -> Self {
        Padding {
            top,
            bottom,
            left,
            right,
        }
    }
}

/// Geometry of one 2-D convolution over an `N×C×H×W` batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub pad: Padding,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn col_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    #[cfg(test)]
    pub fn col_cols(&self) -> usize {
        self.n * self.oh * self.ow
    }
}

/// Output columns `[lo, hi)` whose input column `ox·stride + k − pad` lies
/// inside `0..len`.
fn valid_range(out_len: usize, len: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let first = pad.saturating_sub(k).div_ceil(stride);
    let last = if len + pad > k { (len + pad - k - 1) / stride + 1 } else { 0 };
    (first.min(out_len), last.min(out_len).max(first.min(out_len)))
}

/// Unfolds samples `n0..n1` into a `C·kh·kw × (n1−n0)·oh·ow` matrix.
pub(crate) fn im2col<T: Element>(x: &[T], g: &ConvGeom, n0: usize, n1: usize) -> Vec<T> {
    let plane = g.oh * g.ow;
    let ncols = (n1 - n0) * plane;
    let mut cols = vec![T::zero(); g.col_rows() * ncols];
    for c in 0..g.c {
        for ki in 0..g.kh {
            let (oy0, oy1) = valid_range(g.oh, g.h, ki, g.sh, g.pad.top);
            for kj in 0..g.kw {
                let (ox0, ox1) = valid_range(g.ow, g.w, kj, g.sw, g.pad.left);
                if ox0 == ox1 {
                    continue;
                }
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst_row = &mut cols[row * ncols..(row + 1) * ncols];
                for n in n0..n1 {
                    let src = &x[(n * g.c + c) * g.h * g.w..(n * g.c + c + 1) * g.h * g.w];
                    let dst = &mut dst_row[(n - n0) * plane..(n - n0 + 1) * plane];
                    for oy in oy0..oy1 {
                        let iy = oy * g.sh + ki - g.pad.top;
                        let src_row = &src[iy * g.w..(iy + 1) * g.w];
                        let d = &mut dst[oy * g.ow + ox0..oy * g.ow + ox1];
                        let ix0 = ox0 * g.sw + kj - g.pad.left;
                        if g.sw == 1 {
                            d.copy_from_slice(&src_row[ix0..ix0 + d.len()]);
                        } else {
                            for (i, v) in d.iter_mut().enumerate() {
                                *v = src_row[ix0 + i * g.sw];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: accumulates columns of samples `n0..n1` into `dx`.
pub(crate) fn col2im<T: Element>(cols: &[T], g: &ConvGeom, n0: usize, n1: usize, dx: &mut [T]) {
    let plane = g.oh * g.ow;
    let ncols = (n1 - n0) * plane;
    for c in 0..g.c {
        for ki in 0..g.kh {
            let (oy0, oy1) = valid_range(g.oh, g.h, ki, g.sh, g.pad.top);
            for kj in 0..g.kw {
                let (ox0, ox1) = valid_range(g.ow, g.w, kj, g.sw, g.pad.left);
                if ox0 == ox1 {
                    continue;
                }
                let row = (c * g.kh + ki) * g.kw + kj;
                let src_row = &cols[row * ncols..(row + 1) * ncols];
                for n in n0..n1 {
                    let dst = &mut dx[(n * g.c + c) * g.h * g.w..(n * g.c + c + 1) * g.h * g.w];
                    let src = &src_row[(n - n0) * plane..(n - n0 + 1) * plane];
                    for oy in oy0..oy1 {
                        let iy = oy * g.sh + ki - g.pad.top;
                        let dst_row = &mut dst[iy * g.w..(iy + 1) * g.w];
                        let s = &src[oy * g.ow + ox0..oy * g.ow + ox1];
                        let ix0 = ox0 * g.sw + kj - g.pad.left;
                        for (i, &v) in s.iter().enumerate() {
                            let d = &mut dst_row[ix0 + i * g.sw];
                            *d = *d + v;
                        }
                    }
                }
            }
        }
    }
}

/// Samples per GEMM chunk: keeps the unfolded matrix around 2k columns so
/// it stays in cache.
fn chunk_samples(g: &ConvGeom) -> usize {
    (2048 / (g.oh * g.ow)).clamp(1, g.n.max(1))
}

fn transpose<T: Element>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

pub(crate) fn conv2d_forward<T: Element>(
    x: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    out_channels: usize,
    g: &ConvGeom,
) -> Vec<T> {
    let plane = g.oh * g.ow;
    let k = g.col_rows();
    let mut out = vec![T::zero(); g.n * out_channels * plane];
    let step = chunk_samples(g);
    for n0 in (0..g.n).step_by(step) {
        let n1 = (n0 + step).min(g.n);
        let ncols = (n1 - n0) * plane;
        let cols = im2col(x, g, n0, n1);
        let mut tmp = vec![T::zero(); out_channels * ncols];
        T::gemm(out_channels, k, ncols, weight, false, &cols, false, T::zero(), &mut tmp);
        for o in 0..out_channels {
            let b = bias.map_or(T::zero(), |b| b[o]);
            for n in n0..n1 {
                let src = &tmp[o * ncols + (n - n0) * plane..o * ncols + (n - n0 + 1) * plane];
                let dst = &mut out[(n * out_channels + o) * plane..(n * out_channels + o + 1) * plane];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = s + b;
                }
            }
        }
    }
    out
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

pub(crate) fn conv2d_backward<T: Element>(
    x: &[T],
    weight: &[T],
    grad_out: &[T],
    out_channels: usize,
    g: &ConvGeom,
    need_input: bool,
) -> ConvGrads<T> {
    let k = g.col_rows();
    let plane = g.oh * g.ow;
    let mut bias = vec![T::zero(); out_channels];
    let mut dw = vec![T::zero(); out_channels * k];
    let mut dx = need_input.then(|| vec![T::zero(); g.n * g.c * g.h * g.w]);
    let step = chunk_samples(g);
    for n0 in (0..g.n).step_by(step) {
        let n1 = (n0 + step).min(g.n);
        let ncols = (n1 - n0) * plane;
        let mut dtmp = vec![T::zero(); out_channels * ncols];
        for o in 0..out_channels {
            for n in n0..n1 {
                let src = &grad_out[(n * out_channels + o) * plane..(n * out_channels + o + 1) * plane];
                dtmp[o * ncols + (n - n0) * plane..o * ncols + (n - n0 + 1) * plane].copy_from_slice(src);
            }
            bias[o] = dtmp[o * ncols..(o + 1) * ncols].iter().fold(bias[o], |acc, &v| acc + v);
        }
        let rows = transpose(&im2col(x, g, n0, n1), k, ncols);
        T::gemm(out_channels, ncols, k, &dtmp, false, &rows, false, T::one(), &mut dw);
        if let Some(dx) = dx.as_mut() {
            let mut dcols = vec![T::zero(); k * ncols];
            T::gemm(k, out_channels, ncols, weight, true, &dtmp, false, T::zero(), &mut dcols);
            col2im(&dcols, g, n0, n1, dx);
        }
    }
    ConvGrads {
        input: dx,
        weight: dw,
        bias,
    }
}

/// 2×2/stride-2 max pooling; odd trailing rows/cols see −∞ padding.
/// Returns outputs and the flat input index each output came from.
pub(crate) fn maxpool2x2_forward<T: Element>(
    x: &[T],
    planes: usize,
    h: usize,
    w: usize,
) -> (Vec<T>, Vec<usize>) {
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut arg = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = T::neg_infinity();
                let mut best_ix = usize::MAX;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let (iy, ix) = (oy * 2 + dy, ox * 2 + dx);
                        if iy >= h || ix >= w {
                            continue;
                        }
                        let flat = base + iy * w + ix;
                        // Strict comparison keeps the first maximum in row-major order.
                        if best_ix == usize::MAX || x[flat] > best {
                            best = x[flat];
                            best_ix = flat;
                        }
                    }
                }
                out.push(best);
                arg.push(best_ix);
            }
        }
    }
    (out, arg)
}

/// Per-input strides into an output of rank `out.len()`, zero on broadcast axes.
pub(crate) fn broadcast_strides(input: &[usize], out: &[usize]) -> Vec<usize> {
    let st = strides(input);
    input
        .iter()
        .zip(out)
        .zip(st)
        .map(|((&i, &o), s)| if i == o { s } else { 0 })
        .collect()
}

/// Calls `f(out_flat, a_flat, b_flat)` for every output element.
pub(crate) fn for_each_broadcast(
    out_shape: &[usize],
    a_strides: &[usize],
    b_strides: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let rank = out_shape.len();
    let numel: usize = out_shape.iter().product();
    let mut idx = vec![0usize; rank];
    let (mut ai, mut bi) = (0usize, 0usize);
    for o in 0..numel {
        f(o, ai, bi);
        for d in (0..rank).rev() {
            idx[d] += 1;
            ai += a_strides[d];
            bi += b_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            ai -= a_strides[d] * out_shape[d];
            bi -= b_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
}

/// Sums `grad` (shaped like `out_shape`) down to `in_shape` along broadcast axes.
pub(crate) fn unbroadcast<T: Element>(grad: &[T], out_shape: &[usize], in_shape: &[usize]) -> Vec<T> {
    if out_shape == in_shape {
        return grad.to_vec();
    }
    let in_strides = broadcast_strides(in_shape, out_shape);
    let mut acc = vec![T::zero(); in_shape.iter().product()];
    for_each_broadcast(out_shape, &in_strides, &in_strides, |o, i, _| {
        acc[i] = acc[i] + grad[o];
    });
    acc
}

/// Output shape of a keep-dim reduction over `axes`.
pub(crate) fn reduced_shape(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    shape
        .iter()
        .enumerate()
        .map(|(d, &s)| if axes.contains(&d) { 1 } else { s })
        .collect()
}

/// Maps each input flat index to its flat index in the keep-dim reduced output.
pub(crate) fn reduce_index_map(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let out_shape = reduced_shape(shape, axes);
    let out_strides = broadcast_strides(&out_shape, shape);
    let mut map = vec![0usize; shape.iter().product()];
    for_each_broadcast(shape, &out_strides, &out_strides, |i, o, _| map[i] = o);
    map
}

pub(crate) fn permute<T: Element>(x: &[T], shape: &[usize], axes: &[usize]) -> Vec<T> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = vec![T::zero(); x.len()];
    for_each_broadcast(&out_shape, &src_strides, &src_strides, |o, i, _| out[o] = x[i]);
    out
}

pub(crate) fn inverse_permutation(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

/// Splits `shape` around `axis` into (outer, len, inner).
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn softmax_row<T: Element>(x: &[T], out: &mut [T], log: bool) {
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        total = total + *o;
    }
    if log {
        let shift = max + total.ln();
        for (o, &v) in out.iter_mut().zip(x) {
            *o = v - shift;
        }
    } else {
        let inv = T::one() / total;
        for o in out.iter_mut() {
            *o = *o * inv;
        }
    }
}

pub(crate) fn softmax<T: Element>(x: &[T], shape: &[usize], axis: usize, log: bool) -> Vec<T> {
    let (outer, len, inner) = axis_split(shape, axis);
    let mut out = vec![T::zero(); x.len()];
    if inner == 1 {
        for (xr, or) in x.chunks(len).zip(out.chunks_mut(len)) {
            softmax_row(xr, or, log);
        }
        return out;
    }
    let (mut row, mut res) = (vec![T::zero(); len], vec![T::zero(); len]);
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * len + j) * inner + i;
            for (j, r) in row.iter_mut().enumerate() {
                *r = x[at(j)];
            }
            softmax_row(&row, &mut res, log);
            for (j, &r) in res.iter().enumerate() {
                out[at(j)] = r;
            }
        }
    }
    out
}

pub(crate) fn softmax_backward<T: Element>(
    y: &[T],
    dy: &[T],
    shape: &[usize],
    axis: usize,
    log: bool,
) -> Vec<T> {
    let (outer, len, inner) = axis_split(shape, axis);
    let mut dx = vec![T::zero(); y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * len + j) * inner + i;
            if log {
                let total: T = (0..len).map(|j| dy[at(j)]).sum();
                for j in 0..len {
                    dx[at(j)] = dy[at(j)] - y[at(j)].exp() * total;
                }
            } else {
                let dot: T = (0..len).map(|j| dy[at(j)] * y[at(j)]).sum();
                for j in 0..len {
                    dx[at(j)] = y[at(j)] * (dy[at(j)] - dot);
                }
            }
        }
    }
    dx
}

pub(crate) fn upsample_nearest<T: Element>(
    x: &[T],
    planes: usize,
    h: usize,
    w: usize,
    factor: usize,
) -> Vec<T> {
    let (oh, ow) = (h * factor, w * factor);
    let mut out = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        for oy in 0..oh {
            let row = &x[p * h * w + (oy / factor) * w..p * h * w + (oy / factor + 1) * w];
            out.extend((0..ow).map(|ox| row[ox / factor]));
        }
    }
    out
}

pub(crate) fn upsample_nearest_backward<T: Element>(
    dy: &[T],
    planes: usize,
    h: usize,
    w: usize,
    factor: usize,
) -> Vec<T> {
    let (oh, ow) = (h * factor, w * factor);
    let mut dx = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        for oy in 0..oh {
            for ox in 0..ow {
                let i = p * h * w + (oy / factor) * w + ox / factor;
                dx[i] = dx[i] + dy[p * oh * ow + oy * ow + ox];
            }
        }
    }
    dx
}

/// Per-channel statistics of an `N×C×H×W` buffer: (mean, biased variance).
pub(crate) fn channel_moments<T: Element>(x: &[T], n: usize, c: usize, plane: usize) -> (Vec<T>, Vec<T>) {
    let count = T::from_usize(n * plane);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut s = T::zero();
        for b in 0..n {
            s = s + x[(b * c + ch) * plane..(b * c + ch + 1) * plane].iter().copied().sum();
        }
        let m = s / count;
        let mut v = T::zero();
        for b in 0..n {
            for &val in &x[(b * c + ch) * plane..(b * c + ch + 1) * plane] {
                v = v + (val - m) * (val - m);
            }
        }
        mean[ch] = m;
        var[ch] = v / count;
    }
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn im2col_col2im_are_adjoint() {
        // <im2col(x), y> == <x, col2im(y)> for any x, y.
        let g = ConvGeom {
            n: 2,
            c: 2,
            h: 5,
            w: 4,
            kh: 3,
            kw: 2,
            sh: 2,
            sw: 1,
            pad: Padding::new(1, 0, 0, 1),
            oh: 3,
            ow: 4,
        };
        let x: Vec<f64> = (0..g.n * g.c * g.h * g.w).map(|i| (i as f64).sin()).collect();
        let y: Vec<f64> = (0..g.col_rows() * g.col_cols()).map(|i| (i as f64 * 0.3).cos()).collect();
        let lhs: f64 = im2col(&x, &g, 0, g.n).iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; x.len()];
        col2im(&y, &g, 0, g.n, &mut back);
        let rhs: f64 = x.iter().zip(back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn maxpool_ties_pick_first_row_major() {
        let (out, arg) = maxpool2x2_forward(&[1.0f64, 1.0, 1.0, 1.0], 1, 2, 2);
        assert_eq!(out, vec![1.0]);
        assert_eq!(arg, vec![0]);
        let (_, arg) = maxpool2x2_forward(&[0.0f64, 2.0, 2.0, 1.0], 1, 2, 2);
        assert_eq!(arg, vec![1]);
    }

    #[test]
    fn maxpool_odd_dims_pad_with_neg_infinity() {
        let x: Vec<f64> = vec![-5.0, -4.0, -3.0, -2.0, -1.0, -6.0];
        let (out, _) = maxpool2x2_forward(&x, 1, 2, 3);
        assert_eq!(out, vec![-1.0, -3.0]);
    }

    #[test]
    fn permute_roundtrip() {
        let shape = [2, 3, 4];
        let x: Vec<f64> = (0..24).map(|i| i as f64).collect();
        let axes = [2, 0, 1];
        let y = permute(&x, &shape, &axes);
        assert_eq!(y[1], 4.0);
        let back = permute(&y, &[4, 2, 3], &inverse_permutation(&axes));
        assert_eq!(back, x);
    }

    #[test]
    fn unbroadcast_sums_broadcast_axes() {
        let grad = vec![1.0f64; 12];
        assert_eq!(unbroadcast(&grad, &[2, 3, 2], &[2, 1, 1]), vec![6.0, 6.0]);
        assert_eq!(unbroadcast(&grad, &[2, 3, 2], &[1, 3, 1]), vec![4.0, 4.0, 4.0]);
    }
}
