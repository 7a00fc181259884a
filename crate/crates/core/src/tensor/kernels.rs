//! Forward and backward numeric kernels over raw NHWC buffers.
//!
//! Every reduction runs in a fixed loop order, so results are bit-for-bit
//! reproducible for identical inputs.

use serde::{Deserialize, Serialize};

use super::Element;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Output extent `ceil(n / stride)`; odd padding goes to the bottom/right.
    Same,
    /// No padding; output extent `floor((n - k) / stride) + 1`.
    Valid,
}

/// Output extent and leading pad for one spatial axis.
pub(crate) fn out_extent(
    n: usize,
    k: usize,
    stride: usize,
    padding: Padding,
) -> Result<(usize, usize)> {
    if stride == 0 {
        return Err(Error::Usage("stride must be at least 1".into()));
    }
    match padding {
        Padding::Same => {
            let out = n.div_ceil(stride);
            let total = ((out - 1) * stride + k).saturating_sub(n);
            Ok((out, total / 2))
        }
        Padding::Valid => {
            if k > n {
                return Err(Error::InvalidShape(format!(
                    "kernel extent {k} exceeds input extent {n} with valid padding"
                )));
            }
            Ok(((n - k) / stride + 1, 0))
        }
    }
}

/// Geometry shared by the standard and depthwise convolutions.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub kh: usize,
    pub kw: usize,
    pub cout: usize,
    pub stride: usize,
    pub oh: usize,
    pub ow: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeom {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n: usize,
        h: usize,
        w: usize,
        cin: usize,
        kh: usize,
        kw: usize,
        cout: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        let (oh, pad_top) = out_extent(h, kh, stride, padding)?;
        let (ow, pad_left) = out_extent(w, kw, stride, padding)?;
        Ok(ConvGeom {
            n,
            h,
            w,
            cin,
            kh,
            kw,
            cout,
            stride,
            oh,
            ow,
            pad_top,
            pad_left,
        })
    }

    #[inline]
    fn src(&self, o: usize, k: usize, pad: usize, extent: usize) -> Option<usize> {
        let i = (o * self.stride + k).checked_sub(pad)?;
        (i < extent).then_some(i)
    }

    #[inline]
    fn src_y(&self, oy: usize, ky: usize) -> Option<usize> {
        self.src(oy, ky, self.pad_top, self.h)
    }

    #[inline]
    fn src_x(&self, ox: usize, kx: usize) -> Option<usize> {
        self.src(ox, kx, self.pad_left, self.w)
    }
}

#[inline]
fn axpy<T: Element>(acc: &mut [T], a: T, x: &[T]) {
    for (o, &v) in acc.iter_mut().zip(x) {
        *o += a * v;
    }
}

#[inline]
fn dot<T: Element>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// Standard convolution, kernel layout `[kh, kw, cin, cout]`.
pub(crate) fn conv2d<T: Element>(x: &[T], k: &[T], bias: Option<&[T]>, g: &ConvGeom) -> Vec<T> {
    let mut out = vec![T::zero(); g.n * g.oh * g.ow * g.cout];
    for n in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let o0 = ((n * g.oh + oy) * g.ow + ox) * g.cout;
                let acc = &mut out[o0..o0 + g.cout];
                if let Some(b) = bias {
                    acc.copy_from_slice(b);
                }
                for ky in 0..g.kh {
                    let Some(iy) = g.src_y(oy, ky) else { continue };
                    for kx in 0..g.kw {
                        let Some(ix) = g.src_x(ox, kx) else { continue };
                        let x0 = ((n * g.h + iy) * g.w + ix) * g.cin;
                        let k0 = (ky * g.kw + kx) * g.cin * g.cout;
                        for ci in 0..g.cin {
                            let kr = &k[k0 + ci * g.cout..k0 + (ci + 1) * g.cout];
                            axpy(acc, x[x0 + ci], kr);
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of [`conv2d`] with respect to input, kernel and bias.
pub(crate) fn conv2d_backward<T: Element>(
    x: &[T],
    k: &[T],
    dy: &[T],
    g: &ConvGeom,
    want_dx: bool,
    want_dk: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Vec<T>) {
    let mut dx = want_dx.then(|| vec![T::zero(); x.len()]);
    let mut dk = want_dk.then(|| vec![T::zero(); k.len()]);
    let mut db = vec![T::zero(); g.cout];
    for n in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let o0 = ((n * g.oh + oy) * g.ow + ox) * g.cout;
                let dyr = &dy[o0..o0 + g.cout];
                axpy(&mut db, T::one(), dyr);
                for ky in 0..g.kh {
                    let Some(iy) = g.src_y(oy, ky) else { continue };
                    for kx in 0..g.kw {
                        let Some(ix) = g.src_x(ox, kx) else { continue };
                        let x0 = ((n * g.h + iy) * g.w + ix) * g.cin;
                        let k0 = (ky * g.kw + kx) * g.cin * g.cout;
                        for ci in 0..g.cin {
                            let kr = k0 + ci * g.cout..k0 + (ci + 1) * g.cout;
                            if let Some(dx) = dx.as_mut() {
                                dx[x0 + ci] += dot(&k[kr.clone()], dyr);
                            }
                            if let Some(dk) = dk.as_mut() {
                                axpy(&mut dk[kr], x[x0 + ci], dyr);
                            }
                        }
                    }
                }
            }
        }
    }
    (dx, dk, db)
}

/// Depthwise convolution, kernel layout `[kh, kw, c]`; `g.cin == g.cout`.
pub(crate) fn depthwise_conv2d<T: Element>(x: &[T], k: &[T], g: &ConvGeom) -> Vec<T> {
    let c = g.cin;
    let mut out = vec![T::zero(); g.n * g.oh * g.ow * c];
    for n in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let o0 = ((n * g.oh + oy) * g.ow + ox) * c;
                let acc = &mut out[o0..o0 + c];
                for ky in 0..g.kh {
                    let Some(iy) = g.src_y(oy, ky) else { continue };
                    for kx in 0..g.kw {
                        let Some(ix) = g.src_x(ox, kx) else { continue };
                        let x0 = ((n * g.h + iy) * g.w + ix) * c;
                        let k0 = (ky * g.kw + kx) * c;
                        for ((o, &xv), &kv) in
                            acc.iter_mut().zip(&x[x0..x0 + c]).zip(&k[k0..k0 + c])
                        {
                            *o += xv * kv;
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn depthwise_conv2d_backward<T: Element>(
    x: &[T],
    k: &[T],
    dy: &[T],
    g: &ConvGeom,
    want_dx: bool,
    want_dk: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let c = g.cin;
    let mut dx = want_dx.then(|| vec![T::zero(); x.len()]);
    let mut dk = want_dk.then(|| vec![T::zero(); k.len()]);
    for n in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let o0 = ((n * g.oh + oy) * g.ow + ox) * c;
                let dyr = &dy[o0..o0 + c];
                for ky in 0..g.kh {
                    let Some(iy) = g.src_y(oy, ky) else { continue };
                    for kx in 0..g.kw {
                        let Some(ix) = g.src_x(ox, kx) else { continue };
                        let x0 = ((n * g.h + iy) * g.w + ix) * c;
                        let k0 = (ky * g.kw + kx) * c;
                        if let Some(dx) = dx.as_mut() {
                            for ch in 0..c {
                                dx[x0 + ch] += k[k0 + ch] * dyr[ch];
                            }
                        }
                        if let Some(dk) = dk.as_mut() {
                            for ch in 0..c {
                                dk[k0 + ch] += x[x0 + ch] * dyr[ch];
                            }
                        }
                    }
                }
            }
        }
    }
    (dx, dk)
}

/// Mean over the spatial window of every channel: `[n, h, w, c] -> [n, c]`.
pub(crate) fn global_avg_pool<T: Element>(x: &[T], n: usize, hw: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * c];
    let inv = T::one() / T::cast(hw as f64);
    for b in 0..n {
        let acc = &mut out[b * c..(b + 1) * c];
        for p in 0..hw {
            let x0 = (b * hw + p) * c;
            axpy(acc, T::one(), &x[x0..x0 + c]);
        }
        for v in acc.iter_mut() {
            *v *= inv;
        }
    }
    out
}

pub(crate) fn global_avg_pool_backward<T: Element>(
    dy: &[T],
    n: usize,
    hw: usize,
    c: usize,
) -> Vec<T> {
    let inv = T::one() / T::cast(hw as f64);
    let mut dx = vec![T::zero(); n * hw * c];
    for b in 0..n {
        for p in 0..hw {
            let x0 = (b * hw + p) * c;
            for ch in 0..c {
                dx[x0 + ch] = dy[b * c + ch] * inv;
            }
        }
    }
    dx
}

/// Affine map `x[n, f] @ w[f, k] + b[k]`.
pub(crate) fn dense<T: Element>(x: &[T], w: &[T], b: &[T], n: usize, f: usize, k: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * k];
    for i in 0..n {
        let acc = &mut out[i * k..(i + 1) * k];
        acc.copy_from_slice(b);
        for j in 0..f {
            axpy(acc, x[i * f + j], &w[j * k..(j + 1) * k]);
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn dense_backward<T: Element>(
    x: &[T],
    w: &[T],
    dy: &[T],
    n: usize,
    f: usize,
    k: usize,
    want_dx: bool,
    want_dw: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Vec<T>) {
    let mut dx = want_dx.then(|| vec![T::zero(); n * f]);
    let mut dw = want_dw.then(|| vec![T::zero(); f * k]);
    let mut db = vec![T::zero(); k];
    for i in 0..n {
        let dyr = &dy[i * k..(i + 1) * k];
        axpy(&mut db, T::one(), dyr);
        for j in 0..f {
            let wr = j * k..(j + 1) * k;
            if let Some(dx) = dx.as_mut() {
                dx[i * f + j] = dot(&w[wr.clone()], dyr);
            }
            if let Some(dw) = dw.as_mut() {
                axpy(&mut dw[wr], x[i * f + j], dyr);
            }
        }
    }
    (dx, dw, db)
}

pub(crate) fn sigmoid<T: Element>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Row-wise softmax with max subtraction.
pub(crate) fn softmax<T: Element>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        let xr = &x[r * cols..(r + 1) * cols];
        let m = xr.iter().copied().fold(T::neg_infinity(), T::max);
        let o = &mut out[r * cols..(r + 1) * cols];
        let mut sum = T::zero();
        for (ov, &xv) in o.iter_mut().zip(xr) {
            *ov = (xv - m).exp();
            sum += *ov;
        }
        for ov in o.iter_mut() {
            *ov /= sum;
        }
    }
    out
}

pub(crate) fn softmax_backward<T: Element>(y: &[T], dy: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); rows * cols];
    for r in 0..rows {
        let s = r * cols..(r + 1) * cols;
        let inner = dot(&y[s.clone()], &dy[s.clone()]);
        for i in s {
            dx[i] = y[i] * (dy[i] - inner);
        }
    }
    dx
}

/// Per-channel batch mean and biased variance over all `n*h*w` positions.
pub(crate) fn channel_moments<T: Element>(x: &[T], c: usize) -> (Vec<T>, Vec<T>) {
    let m = x.len() / c;
    let inv = T::one() / T::cast(m as f64);
    let mut mean = vec![T::zero(); c];
    for p in 0..m {
        axpy(&mut mean, T::one(), &x[p * c..(p + 1) * c]);
    }
    for v in mean.iter_mut() {
        *v *= inv;
    }
    let mut var = vec![T::zero(); c];
    for p in 0..m {
        for ch in 0..c {
            let d = x[p * c + ch] - mean[ch];
            var[ch] += d * d;
        }
    }
    for v in var.iter_mut() {
        *v *= inv;
    }
    (mean, var)
}

/// Normalizes with the given statistics. Returns `(y, x_hat, inv_std)`.
pub(crate) fn batch_norm<T: Element>(
    x: &[T],
    gamma: &[T],
    beta: &[T],
    mean: &[T],
    var: &[T],
    eps: T,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let c = gamma.len();
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); x.len()];
    let mut y = vec![T::zero(); x.len()];
    for (i, (&xv, (h, o))) in x.iter().zip(xhat.iter_mut().zip(y.iter_mut())).enumerate() {
        let ch = i % c;
        *h = (xv - mean[ch]) * inv_std[ch];
        *o = gamma[ch] * *h + beta[ch];
    }
    (y, xhat, inv_std)
}

/// Input gradient of training-mode batch norm (statistics depend on `x`).
pub(crate) fn batch_norm_train_backward<T: Element>(
    dy: &[T],
    xhat: &[T],
    gamma: &[T],
    inv_std: &[T],
) -> Vec<T> {
    let c = gamma.len();
    let m = dy.len() / c;
    let mf = T::cast(m as f64);
    let mut sum_d = vec![T::zero(); c];
    let mut sum_dx = vec![T::zero(); c];
    for (i, (&d, &h)) in dy.iter().zip(xhat).enumerate() {
        let ch = i % c;
        let dh = d * gamma[ch];
        sum_d[ch] += dh;
        sum_dx[ch] += dh * h;
    }
    dy.iter()
        .zip(xhat)
        .enumerate()
        .map(|(i, (&d, &h))| {
            let ch = i % c;
            let dh = d * gamma[ch];
            inv_std[ch] / mf * (mf * dh - sum_d[ch] - h * sum_dx[ch])
        })
        .collect()
}

/// Gamma and beta gradients shared by both batch-norm modes.
pub(crate) fn batch_norm_affine_backward<T: Element>(
    dy: &[T],
    xhat: &[T],
    c: usize,
) -> (Vec<T>, Vec<T>) {
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for (i, (&d, &h)) in dy.iter().zip(xhat).enumerate() {
        let ch = i % c;
        dgamma[ch] += d * h;
        dbeta[ch] += d;
    }
    (dgamma, dbeta)
}

/// `x[n, h, w, c] * s[n, c]`.
pub(crate) fn scale_channels<T: Element>(
    x: &[T],
    s: &[T],
    n: usize,
    hw: usize,
    c: usize,
) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for b in 0..n {
        let sr = &s[b * c..(b + 1) * c];
        for p in 0..hw {
            let x0 = (b * hw + p) * c;
            for ch in 0..c {
                out[x0 + ch] = x[x0 + ch] * sr[ch];
            }
        }
    }
    out
}
