//! Forward and backward numeric kernels shared by the tape and by the
//! tape-free reference paths.
//!
//! All loops run in a fixed sequential order, so results are bit-identical
//! between runs.

use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::{Real, Result, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Padding {
    Same,
    Valid,
}

/// Resolved spatial arithmetic for a convolution over an NHWC input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub oh: usize,
    pub ow: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

fn out_extent(input: usize, kernel: usize, stride: usize, padding: Padding) -> Option<(usize, usize)> {
    match padding {
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            Some((out, total / 2))
        }
        Padding::Valid => (kernel <= input).then(|| ((input - kernel) / stride + 1, 0)),
    }
}

impl ConvGeometry {
    pub fn new(x_shape: &[usize], kh: usize, kw: usize, stride: usize, padding: Padding) -> Result<Self> {
        if x_shape.len() != 4 {
            return Err(TensorError::Config(alloc::format!("convolution input must be NHWC, got {x_shape:?}")));
        }
        if stride == 0 {
            return Err(TensorError::Config("stride must be >= 1".into()));
        }
        let (n, h, w, cin) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
        let too_large = || TensorError::KernelTooLarge { kernel: vec![kh, kw], input: vec![h, w] };
        let (oh, pad_top) = out_extent(h, kh, stride, padding).ok_or_else(too_large)?;
        let (ow, pad_left) = out_extent(w, kw, stride, padding).ok_or_else(too_large)?;
        Ok(ConvGeometry { n, h, w, cin, kh, kw, stride, oh, ow, pad_top, pad_left })
    }

    #[inline]
    fn input_row(&self, oy: usize, ky: usize) -> Option<usize> {
        (oy * self.stride + ky).checked_sub(self.pad_top).filter(|&y| y < self.h)
    }

    #[inline]
    fn input_col(&self, ox: usize, kx: usize) -> Option<usize> {
        (ox * self.stride + kx).checked_sub(self.pad_left).filter(|&x| x < self.w)
    }
}

/// Standard cross-correlation. `k` is `[kh, kw, c_in, c_out]`.
pub fn conv2d<T: Real>(x: &Tensor<T>, k: &Tensor<T>, stride: usize, padding: Padding) -> Result<(Tensor<T>, ConvGeometry)> {
    let ks = k.shape();
    if ks.len() != 4 {
        return Err(TensorError::Config(alloc::format!("conv kernel must be [kh,kw,cin,cout], got {ks:?}")));
    }
    let g = ConvGeometry::new(x.shape(), ks[0], ks[1], stride, padding)?;
    if ks[2] != g.cin {
        return Err(TensorError::ShapeMismatch { lhs: x.shape().to_vec(), rhs: ks.to_vec() });
    }
    let cout = ks[3];
    let (xd, kd) = (x.data(), k.data());
    let mut out = vec![T::zero(); g.n * g.oh * g.ow * cout];
    for n in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let o = ((n * g.oh + oy) * g.ow + ox) * cout;
                let acc = &mut out[o..o + cout];
                for ky in 0..g.kh {
                    let Some(iy) = g.input_row(oy, ky) else { continue };
                    for kx in 0..g.kw {
                        let Some(ix) = g.input_col(ox, kx) else { continue };
                        let xi = ((n * g.h + iy) * g.w + ix) * g.cin;
                        let kb = (ky * g.kw + kx) * g.cin * cout;
                        for ci in 0..g.cin {
                            let xv = xd[xi + ci];
                            if xv == T::zero() {
                                continue;
                            }
                            let row = &kd[kb + ci * cout..kb + (ci + 1) * cout];
                            for (a, &kv) in acc.iter_mut().zip(row) {
                                *a += xv * kv;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((Tensor::from_vec(&[g.n, g.oh, g.ow, cout], out)?, g))
}

/// Gradients of [`conv2d`] with respect to input and kernel.
pub fn conv2d_backward<T: Real>(x: &Tensor<T>, k: &Tensor<T>, gy: &Tensor<T>, g: &ConvGeometry) -> (Tensor<T>, Tensor<T>) {
    let cout = k.shape()[3];
    let (xd, kd, gd) = (x.data(), k.data(), gy.data());
    let mut gx = vec![T::zero(); x.len()];
    let mut gk = vec![T::zero(); k.len()];
    for n in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let o = ((n * g.oh + oy) * g.ow + ox) * cout;
                let grow = &gd[o..o + cout];
                for ky in 0..g.kh {
                    let Some(iy) = g.input_row(oy, ky) else { continue };
                    for kx in 0..g.kw {
                        let Some(ix) = g.input_col(ox, kx) else { continue };
                        let xi = ((n * g.h + iy) * g.w + ix) * g.cin;
                        let kb = (ky * g.kw + kx) * g.cin * cout;
                        for ci in 0..g.cin {
                            let xv = xd[xi + ci];
                            let krow = &kd[kb + ci * cout..kb + (ci + 1) * cout];
                            let gkrow = &mut gk[kb + ci * cout..kb + (ci + 1) * cout];
                            let mut s = T::zero();
                            for co in 0..cout {
                                s += grow[co] * krow[co];
                                gkrow[co] += xv * grow[co];
                            }
                            gx[xi + ci] += s;
                        }
                    }
                }
            }
        }
    }
    (
        Tensor::from_vec(x.shape(), gx).expect("shape preserved"),
        Tensor::from_vec(k.shape(), gk).expect("shape preserved"),
    )
}

/// One filter per channel, no channel mixing. `k` is `[kh, kw, c]`.
pub fn depthwise_conv2d<T: Real>(x: &Tensor<T>, k: &Tensor<T>, stride: usize, padding: Padding) -> Result<(Tensor<T>, ConvGeometry)> {
    let ks = k.shape();
    if ks.len() != 3 {
        return Err(TensorError::Config(alloc::format!("depthwise kernel must be [kh,kw,c], got {ks:?}")));
    }
    let g = ConvGeometry::new(x.shape(), ks[0], ks[1], stride, padding)?;
    if ks[2] != g.cin {
        return Err(TensorError::ShapeMismatch { lhs: x.shape().to_vec(), rhs: ks.to_vec() });
    }
    let c = g.cin;
    let (xd, kd) = (x.data(), k.data());
    let mut out = vec![T::zero(); g.n * g.oh * g.ow * c];
    for n in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let o = ((n * g.oh + oy) * g.ow + ox) * c;
                let acc = &mut out[o..o + c];
                for ky in 0..g.kh {
                    let Some(iy) = g.input_row(oy, ky) else { continue };
                    for kx in 0..g.kw {
                        let Some(ix) = g.input_col(ox, kx) else { continue };
                        let xi = ((n * g.h + iy) * g.w + ix) * c;
                        let kb = (ky * g.kw + kx) * c;
                        for ((a, &xv), &kv) in acc.iter_mut().zip(&xd[xi..xi + c]).zip(&kd[kb..kb + c]) {
                            *a += xv * kv;
                        }
                    }
                }
            }
        }
    }
    Ok((Tensor::from_vec(&[g.n, g.oh, g.ow, c], out)?, g))
}

pub fn depthwise_conv2d_backward<T: Real>(x: &Tensor<T>, k: &Tensor<T>, gy: &Tensor<T>, g: &ConvGeometry) -> (Tensor<T>, Tensor<T>) {
    let c = g.cin;
    let (xd, kd, gd) = (x.data(), k.data(), gy.data());
    let mut gx = vec![T::zero(); x.len()];
    let mut gk = vec![T::zero(); k.len()];
    for n in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let o = ((n * g.oh + oy) * g.ow + ox) * c;
                for ky in 0..g.kh {
                    let Some(iy) = g.input_row(oy, ky) else { continue };
                    for kx in 0..g.kw {
                        let Some(ix) = g.input_col(ox, kx) else { continue };
                        let xi = ((n * g.h + iy) * g.w + ix) * c;
                        let kb = (ky * g.kw + kx) * c;
                        for ch in 0..c {
                            let gv = gd[o + ch];
                            gx[xi + ch] += gv * kd[kb + ch];
                            gk[kb + ch] += gv * xd[xi + ch];
                        }
                    }
                }
            }
        }
    }
    (
        Tensor::from_vec(x.shape(), gx).expect("shape preserved"),
        Tensor::from_vec(k.shape(), gk).expect("shape preserved"),
    )
}

fn matrix_dims<T: Real>(t: &Tensor<T>) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(TensorError::Config(alloc::format!("matmul operands must be rank 2, got {s:?}"))),
    }
}

/// `[m,k] x [k,n] -> [m,n]`
pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = matrix_dims(a)?;
    let (k2, n) = matrix_dims(b)?;
    if k != k2 {
        return Err(TensorError::MatmulMismatch { lhs: a.shape().to_vec(), rhs: b.shape().to_vec() });
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = ad[i * k + p];
            for (o, &bv) in row.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    Tensor::from_vec(&[m, n], out)
}

/// Gradients of `a @ b` given the upstream gradient `g` of shape `[m,n]`.
pub fn matmul_backward<T: Real>(a: &Tensor<T>, b: &Tensor<T>, g: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let (ad, bd, gd) = (a.data(), b.data(), g.data());
    let mut ga = vec![T::zero(); m * k];
    let mut gb = vec![T::zero(); k * n];
    for i in 0..m {
        let grow = &gd[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &bd[p * n..(p + 1) * n];
            let mut s = T::zero();
            for j in 0..n {
                s += grow[j] * brow[j];
            }
            ga[i * k + p] = s;
            let av = ad[i * k + p];
            for (o, &gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
    (
        Tensor::from_vec(a.shape(), ga).expect("shape preserved"),
        Tensor::from_vec(b.shape(), gb).expect("shape preserved"),
    )
}

/// Softmax along `axis`, max-shifted for stability.
pub fn softmax<T: Real>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let (outer, len, inner) = x.axis_extents(axis)?;
    let xd = x.data();
    let mut out = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |a: usize| (o * len + a) * inner + i;
            let mut m = T::neg_infinity();
            for a in 0..len {
                m = m.max(xd[at(a)]);
            }
            let mut z = T::zero();
            for a in 0..len {
                let e = (xd[at(a)] - m).exp();
                out[at(a)] = e;
                z += e;
            }
            for a in 0..len {
                out[at(a)] /= z;
            }
        }
    }
    Tensor::from_vec(x.shape(), out)
}

/// Backward of softmax given its output `y`.
pub fn softmax_backward<T: Real>(y: &Tensor<T>, g: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, len, inner) = y.axis_extents(axis).expect("validated in forward");
    let (yd, gd) = (y.data(), g.data());
    let mut out = vec![T::zero(); y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |a: usize| (o * len + a) * inner + i;
            let mut dot = T::zero();
            for a in 0..len {
                dot += yd[at(a)] * gd[at(a)];
            }
            for a in 0..len {
                out[at(a)] = yd[at(a)] * (gd[at(a)] - dot);
            }
        }
    }
    Tensor::from_vec(y.shape(), out).expect("shape preserved")
}

/// Per-channel batch statistics over all leading axes: biased mean and variance.
pub fn channel_moments<T: Real>(x: &Tensor<T>) -> Result<(Vec<T>, Vec<T>)> {
    let c = *x.shape().last().ok_or(TensorError::EmptyBatch)?;
    let count = x.len() / c;
    if count == 0 {
        return Err(TensorError::EmptyBatch);
    }
    let cnt = T::of(count as f64);
    let mut mean = vec![T::zero(); c];
    for row in x.data().chunks(c) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= cnt);
    let mut var = vec![T::zero(); c];
    for row in x.data().chunks(c) {
        for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
            let d = v - m;
            *s += d * d;
        }
    }
    var.iter_mut().for_each(|s| *s /= cnt);
    Ok((mean, var))
}

/// Euclidean norms over the last axis.
pub fn last_axis_norms<T: Real>(x: &Tensor<T>) -> Vec<T> {
    let d = *x.shape().last().unwrap_or(&1);
    x.data().chunks(d).map(|v| v.iter().map(|&a| a * a).sum::<T>().sqrt()).collect()
}

/// Capsule squash over the last axis: `(|s|^2 / (1 + |s|^2)) * s / (|s| + eps)`.
pub fn squash<T: Real>(s: &Tensor<T>, eps: T) -> Tensor<T> {
    let d = *s.shape().last().unwrap_or(&1);
    let mut out = Vec::with_capacity(s.len());
    for v in s.data().chunks(d) {
        let n2: T = v.iter().map(|&a| a * a).sum();
        let n = n2.sqrt();
        let f = n2 / ((T::one() + n2) * (n + eps));
        out.extend(v.iter().map(|&a| f * a));
    }
    Tensor::from_vec(s.shape(), out).expect("shape preserved")
}

/// Backward of [`squash`] evaluated at the pre-activation `s`.
///
/// With `n = |s|` and `q = 1 / ((1 + n^2)(n + eps))`, the scale factor is
/// `f = n^2 q` and `f'(n) / n = q (2 / (1 + n^2) - n / (n + eps))`, which
/// stays finite at `s = 0`.
pub fn squash_backward<T: Real>(s: &Tensor<T>, g: &Tensor<T>, eps: T) -> Tensor<T> {
    let d = *s.shape().last().unwrap_or(&1);
    let mut out = Vec::with_capacity(s.len());
    let two = T::of(2.0);
    for (v, gv) in s.data().chunks(d).zip(g.data().chunks(d)) {
        let n2: T = v.iter().map(|&a| a * a).sum();
        let n = n2.sqrt();
        let q = T::one() / ((T::one() + n2) * (n + eps));
        let f = n2 * q;
        let df_over_n = q * (two / (T::one() + n2) - n / (n + eps));
        let sg: T = v.iter().zip(gv).map(|(&a, &b)| a * b).sum();
        out.extend(v.iter().zip(gv).map(|(&a, &b)| f * b + df_over_n * sg * a));
    }
    Tensor::from_vec(s.shape(), out).expect("shape preserved")
}

/// Vote prediction `u_hat[b,i,j,:] = u[b,i,:] . W[i mod g, j]`.
///
/// `u` is `[batch, I, in_dim]`, `w` is `[g, J, in_dim, out_dim]`.
pub fn predict_votes<T: Real>(u: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, i_caps, din) = match u.shape() {
        [b, i, d] => (*b, *i, *d),
        s => return Err(TensorError::Config(alloc::format!("capsule input must be [batch, caps, dim], got {s:?}"))),
    };
    let (groups, j_caps, wdin, dout) = match w.shape() {
        [g, j, di, do_] => (*g, *j, *di, *do_),
        s => return Err(TensorError::Config(alloc::format!("capsule weights must be [groups, J, in_dim, out_dim], got {s:?}"))),
    };
    if wdin != din || i_caps % groups != 0 {
        return Err(TensorError::ShapeMismatch { lhs: u.shape().to_vec(), rhs: w.shape().to_vec() });
    }
    let (ud, wd) = (u.data(), w.data());
    let mut out = vec![T::zero(); b * i_caps * j_caps * dout];
    for bb in 0..b {
        for i in 0..i_caps {
            let grp = i % groups;
            let urow = &ud[(bb * i_caps + i) * din..(bb * i_caps + i + 1) * din];
            for j in 0..j_caps {
                let o = ((bb * i_caps + i) * j_caps + j) * dout;
                let acc = &mut out[o..o + dout];
                let wb = (grp * j_caps + j) * din * dout;
                for (d, &uv) in urow.iter().enumerate() {
                    let wrow = &wd[wb + d * dout..wb + (d + 1) * dout];
                    for (a, &wv) in acc.iter_mut().zip(wrow) {
                        *a += uv * wv;
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[b, i_caps, j_caps, dout], out)
}

pub fn predict_votes_backward<T: Real>(u: &Tensor<T>, w: &Tensor<T>, g: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    let (b, i_caps, din) = (u.shape()[0], u.shape()[1], u.shape()[2]);
    let (groups, j_caps, dout) = (w.shape()[0], w.shape()[1], w.shape()[3]);
    let (ud, wd, gd) = (u.data(), w.data(), g.data());
    let mut gu = vec![T::zero(); u.len()];
    let mut gw = vec![T::zero(); w.len()];
    for bb in 0..b {
        for i in 0..i_caps {
            let grp = i % groups;
            let ub = (bb * i_caps + i) * din;
            for j in 0..j_caps {
                let o = ((bb * i_caps + i) * j_caps + j) * dout;
                let grow = &gd[o..o + dout];
                let wb = (grp * j_caps + j) * din * dout;
                for d in 0..din {
                    let wrow = &wd[wb + d * dout..wb + (d + 1) * dout];
                    let gwrow = &mut gw[wb + d * dout..wb + (d + 1) * dout];
                    let uv = ud[ub + d];
                    let mut s = T::zero();
                    for o2 in 0..dout {
                        s += grow[o2] * wrow[o2];
                        gwrow[o2] += uv * grow[o2];
                    }
                    gu[ub + d] += s;
                }
            }
        }
    }
    (
        Tensor::from_vec(u.shape(), gu).expect("shape preserved"),
        Tensor::from_vec(w.shape(), gw).expect("shape preserved"),
    )
}

fn vote_dims<T: Real>(votes: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
    match votes.shape() {
        [b, i, j, d] => Ok((*b, *i, *j, *d)),
        s => Err(TensorError::Config(alloc::format!("votes must be [batch, I, J, dim], got {s:?}"))),
    }
}

/// `s[b,j,:] = sum_i c[b,i,j] * votes[b,i,j,:]`
pub fn weighted_vote_sum<T: Real>(c: &Tensor<T>, votes: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, ic, jc, d) = vote_dims(votes)?;
    if c.shape() != [b, ic, jc] {
        return Err(TensorError::ShapeMismatch { lhs: c.shape().to_vec(), rhs: votes.shape().to_vec() });
    }
    let (cd, vd) = (c.data(), votes.data());
    let mut out = vec![T::zero(); b * jc * d];
    for bb in 0..b {
        for i in 0..ic {
            for j in 0..jc {
                let cv = cd[(bb * ic + i) * jc + j];
                let vb = ((bb * ic + i) * jc + j) * d;
                let ob = (bb * jc + j) * d;
                for (o, &v) in out[ob..ob + d].iter_mut().zip(&vd[vb..vb + d]) {
                    *o += cv * v;
                }
            }
        }
    }
    Tensor::from_vec(&[b, jc, d], out)
}

pub fn weighted_vote_sum_backward<T: Real>(c: &Tensor<T>, votes: &Tensor<T>, g: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    let (b, ic, jc, d) = vote_dims(votes).expect("validated in forward");
    let (cd, vd, gd) = (c.data(), votes.data(), g.data());
    let mut gc = vec![T::zero(); c.len()];
    let mut gv = vec![T::zero(); votes.len()];
    for bb in 0..b {
        for i in 0..ic {
            for j in 0..jc {
                let ci = (bb * ic + i) * jc + j;
                let vb = ci * d;
                let gb = (bb * jc + j) * d;
                let mut s = T::zero();
                for k in 0..d {
                    s += gd[gb + k] * vd[vb + k];
                    gv[vb + k] = cd[ci] * gd[gb + k];
                }
                gc[ci] = s;
            }
        }
    }
    (
        Tensor::from_vec(c.shape(), gc).expect("shape preserved"),
        Tensor::from_vec(votes.shape(), gv).expect("shape preserved"),
    )
}

/// Agreement `a[b,i,j] = v[b,j,:] . votes[b,i,j,:]`.
pub fn agreement<T: Real>(v: &Tensor<T>, votes: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, ic, jc, d) = vote_dims(votes)?;
    if v.shape() != [b, jc, d] {
        return Err(TensorError::ShapeMismatch { lhs: v.shape().to_vec(), rhs: votes.shape().to_vec() });
    }
    let (vd, ud) = (v.data(), votes.data());
    let mut out = vec![T::zero(); b * ic * jc];
    for bb in 0..b {
        for i in 0..ic {
            for j in 0..jc {
                let ub = ((bb * ic + i) * jc + j) * d;
                let vb = (bb * jc + j) * d;
                out[(bb * ic + i) * jc + j] = (0..d).map(|k| vd[vb + k] * ud[ub + k]).sum();
            }
        }
    }
    Tensor::from_vec(&[b, ic, jc], out)
}

pub fn agreement_backward<T: Real>(v: &Tensor<T>, votes: &Tensor<T>, g: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    let (b, ic, jc, d) = vote_dims(votes).expect("validated in forward");
    let (vd, ud, gd) = (v.data(), votes.data(), g.data());
    let mut gv = vec![T::zero(); v.len()];
    let mut gu = vec![T::zero(); votes.len()];
    for bb in 0..b {
        for i in 0..ic {
            for j in 0..jc {
                let ga = gd[(bb * ic + i) * jc + j];
                let ub = ((bb * ic + i) * jc + j) * d;
                let vb = (bb * jc + j) * d;
                for k in 0..d {
                    gv[vb + k] += ga * ud[ub + k];
                    gu[ub + k] = ga * vd[vb + k];
                }
            }
        }
    }
    (
        Tensor::from_vec(v.shape(), gv).expect("shape preserved"),
        Tensor::from_vec(votes.shape(), gu).expect("shape preserved"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn conv_output_extents() {
        let g = ConvGeometry::new(&[1, 7, 7, 1], 3, 3, 2, Padding::Same).unwrap();
        assert_eq!((g.oh, g.ow), (4, 4));
        let g = ConvGeometry::new(&[1, 7, 7, 1], 3, 3, 2, Padding::Valid).unwrap();
        assert_eq!((g.oh, g.ow), (3, 3));
        assert!(matches!(
            ConvGeometry::new(&[1, 2, 2, 1], 3, 3, 1, Padding::Valid),
            Err(TensorError::KernelTooLarge { .. })
        ));
    }

    #[test]
    fn conv_valid_hand_case() {
        let x = t(&[1, 2, 2, 1], &[1., 2., 3., 4.]);
        let k = t(&[2, 2, 1, 1], &[1., 0., 0., 1.]);
        let (y, _) = conv2d(&x, &k, 1, Padding::Valid).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[5.0]);
    }

    #[test]
    fn conv_identity_and_zero() {
        let x = t(&[1, 3, 3, 2], &(0..18).map(|v| v as f64).collect::<Vec<_>>());
        let eye = t(&[1, 1, 2, 2], &[1., 0., 0., 1.]);
        assert_eq!(conv2d(&x, &eye, 1, Padding::Same).unwrap().0, x);
        let zero = x.zeros_like();
        let k = t(&[3, 3, 2, 4], &[0.3; 72]);
        assert!(conv2d(&zero, &k, 1, Padding::Same).unwrap().0.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn depthwise_ones_kernel_interior() {
        let x = Tensor::<f64>::full(&[1, 5, 5, 2], 1.5).unwrap();
        let k = Tensor::<f64>::ones(&[3, 3, 2]).unwrap();
        let (y, _) = depthwise_conv2d(&x, &k, 1, Padding::Same).unwrap();
        for yy in 1..4 {
            for xx in 1..4 {
                for c in 0..2 {
                    assert_eq!(y.data()[((yy * 5) + xx) * 2 + c], 13.5);
                }
            }
        }
        let zk = k.zeros_like();
        assert!(depthwise_conv2d(&x, &zk, 1, Padding::Same).unwrap().0.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn depthwise_single_channel_matches_conv() {
        let x = t(&[1, 4, 4, 1], &(0..16).map(|v| (v as f64).sin()).collect::<Vec<_>>());
        let kd: Vec<f64> = (0..9).map(|v| (v as f64 * 0.7).cos()).collect();
        let a = depthwise_conv2d(&x, &t(&[3, 3, 1], &kd), 2, Padding::Same).unwrap().0;
        let b = conv2d(&x, &t(&[3, 3, 1, 1], &kd), 2, Padding::Same).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn matmul_cases() {
        let a = t(&[2, 2], &[1., 2., 3., 4.]);
        let b = t(&[2, 1], &[5., 6.]);
        assert_eq!(matmul(&a, &b).unwrap().data(), &[17., 39.]);
        let eye = t(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        let x = t(&[3, 2], &[1., 2., 3., 4., 5., 6.]);
        assert_eq!(matmul(&eye, &x).unwrap(), x);
        assert!(matches!(matmul(&a, &x), Err(TensorError::MatmulMismatch { .. })));
    }

    #[test]
    fn softmax_cases() {
        let x = t(&[2], &[0.0, 3f64.ln()]);
        let y = softmax(&x, 0).unwrap();
        assert!((y.data()[0] - 0.25).abs() < 1e-15 && (y.data()[1] - 0.75).abs() < 1e-15);
        let z = softmax(&Tensor::<f64>::zeros(&[4]).unwrap(), 0).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.25));
        let x = t(&[2, 3], &[0.1, -2.0, 0.7, 1.0, 2.0, 3.0]);
        let a = softmax(&x, 1).unwrap();
        let b = softmax(&x.add_scalar(100.0), 1).unwrap();
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() < 1e-12);
        }
        assert!(softmax(&x, 2).is_err());
    }

    #[test]
    fn squash_hand_values() {
        let v = squash(&t(&[3], &[1., 0., 0.]), 1e-7);
        assert!((v.data()[0] - 0.5).abs() < 1e-6);
        let z = squash(&Tensor::<f64>::zeros(&[3]).unwrap(), 1e-7);
        assert!(z.data().iter().all(|&a| a == 0.0));
        let big = squash(&t(&[2], &[1000., 0.]), 1e-7);
        assert!((big.data()[0] - 0.999999).abs() < 1e-6);
        assert!(big.data()[0] < 1.0);
    }
}
