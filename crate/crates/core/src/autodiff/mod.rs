//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its value and enough saved state
//! for its pullback. Node indices are assigned in execution order, so
//! walking the tape backwards is a valid topological order and visits each
//! node once.

mod gradcheck;
mod params;

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

pub use gradcheck::{directional_check, finite_diff_check, GradCheckOptions, GradCheckReport};
pub use params::{ParamId, ParamStore, Parameter};

use crate::kernels::{self, ConvGeometry, Padding};
use crate::loss::{self, MarginLossConfig};
use crate::rng::{self, Rng};
use crate::tensor::{Real, Result, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

/// Elementwise operations with scalar-or-same-shape broadcasting.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Scale,
    Relu6,
    Sigmoid,
}

/// Second operand of [`Tape::elementwise`].
#[derive(Clone, Copy, Debug)]
pub enum Operand<T> {
    Var(Var),
    Scalar(T),
}

enum Op<T> {
    Leaf { param: Option<ParamId> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddScalar(Var),
    Scale(Var, T),
    Relu6(Var),
    Sigmoid(Var),
    MatMul(Var, Var),
    Conv2d { x: Var, k: Var, geom: ConvGeometry },
    Depthwise { x: Var, k: Var, geom: ConvGeometry },
    BiasAdd { x: Var, b: Var },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Tensor<T>, inv_std: Vec<T>, batch_stats: bool },
    Reshape(Var),
    Dropout { x: Var, mask: Tensor<T> },
    Softmax { x: Var, axis: usize },
    Sum(Var),
    Mean(Var),
    GlobalAvgPool(Var),
    Squash { x: Var, eps: T },
    Norm(Var),
    PredictVotes { u: Var, w: Var },
    WeightedVoteSum { c: Var, votes: Var },
    Agreement { v: Var, votes: Var },
    MarginLoss { lengths: Var, targets: Tensor<T>, cfg: MarginLossConfig },
    LogCosh { pred: Var, target: Tensor<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Batch statistics produced by a train-mode batch norm node.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Single-threaded recording of one forward pass.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// A constant input; receives a gradient but is not a parameter.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf { param: None })
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Leaf { param: Some(id) })
    }

    pub fn elementwise(&mut self, op: Elementwise, a: Var, b: Operand<T>) -> Result<Var> {
        match (op, b) {
            (Elementwise::Add, Operand::Var(b)) => self.add(a, b),
            (Elementwise::Add, Operand::Scalar(k)) => Ok(self.add_scalar(a, k)),
            (Elementwise::Sub, Operand::Var(b)) => self.sub(a, b),
            (Elementwise::Sub, Operand::Scalar(k)) => Ok(self.add_scalar(a, -k)),
            (Elementwise::Mul, Operand::Var(b)) => self.mul(a, b),
            (Elementwise::Mul | Elementwise::Scale, Operand::Scalar(k)) => Ok(self.scale(a, k)),
            (Elementwise::Scale, Operand::Var(b)) => self.mul(a, b),
            (Elementwise::Relu6, _) => Ok(self.relu6(a)),
            (Elementwise::Sigmoid, _) => Ok(self.sigmoid(a)),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).mul(self.value(b))?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn add_scalar(&mut self, a: Var, k: T) -> Var {
        let v = self.value(a).add_scalar(k);
        self.push(v, Op::AddScalar(a))
    }

    pub fn scale(&mut self, a: Var, k: T) -> Var {
        let v = self.value(a).scale(k);
        self.push(v, Op::Scale(a, k))
    }

    pub fn relu6(&mut self, a: Var) -> Var {
        let six = T::of(6.0);
        let v = self.value(a).map(|x| x.max(T::zero()).min(six));
        self.push(v, Op::Relu6(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| T::one() / (T::one() + (-x).exp()));
        self.push(v, Op::Sigmoid(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = kernels::matmul(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize, padding: Padding) -> Result<Var> {
        let (v, geom) = kernels::conv2d(self.value(x), self.value(k), stride, padding)?;
        Ok(self.push(v, Op::Conv2d { x, k, geom }))
    }

    pub fn depthwise_conv2d(&mut self, x: Var, k: Var, stride: usize, padding: Padding) -> Result<Var> {
        let (v, geom) = kernels::depthwise_conv2d(self.value(x), self.value(k), stride, padding)?;
        Ok(self.push(v, Op::Depthwise { x, k, geom }))
    }

    /// Adds a `[c]` vector along the last axis.
    pub fn bias_add(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        let c = *xv.shape().last().unwrap_or(&1);
        if bv.shape() != [c] {
            return Err(TensorError::ShapeMismatch { lhs: xv.shape().to_vec(), rhs: bv.shape().to_vec() });
        }
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(c) {
            for (o, &bb) in row.iter_mut().zip(bv.data()) {
                *o += bb;
            }
        }
        Ok(self.push(out, Op::BiasAdd { x, b }))
    }

    fn bn_apply(&mut self, x: Var, gamma: Var, beta: Var, mean: &[T], var: &[T], eps: T, batch_stats: bool) -> Result<Var> {
        let xv = self.value(x);
        let c = *xv.shape().last().unwrap_or(&1);
        let (gv, bv) = (self.value(gamma), self.value(beta));
        if gv.shape() != [c] || bv.shape() != [c] || mean.len() != c || var.len() != c {
            return Err(TensorError::ShapeMismatch { lhs: xv.shape().to_vec(), rhs: gv.shape().to_vec() });
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = xv.clone();
        for row in xhat.data_mut().chunks_mut(c) {
            for ((o, &m), &s) in row.iter_mut().zip(mean).zip(&inv_std) {
                *o = (*o - m) * s;
            }
        }
        let mut out = xhat.clone();
        for row in out.data_mut().chunks_mut(c) {
            for ((o, &g), &b) in row.iter_mut().zip(gv.data()).zip(bv.data()) {
                *o = *o * g + b;
            }
        }
        Ok(self.push(out, Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats }))
    }

    /// Normalises by the statistics of this batch over all leading axes and
    /// returns them for the caller's running averages.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<(Var, BatchStats<T>)> {
        let (mean, var) = kernels::channel_moments(self.value(x))?;
        let y = self.bn_apply(x, gamma, beta, &mean, &var, eps, true)?;
        Ok((y, BatchStats { mean, var }))
    }

    pub fn batch_norm_infer(&mut self, x: Var, gamma: Var, beta: Var, mean: &[T], var: &[T], eps: T) -> Result<Var> {
        self.bn_apply(x, gamma, beta, mean, var, eps, false)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).reshape(shape)?;
        Ok(self.push(v, Op::Reshape(x)))
    }

    /// Inverted dropout: zeroes with probability `rate`, scales survivors
    /// by `1 / (1 - rate)`.
    pub fn dropout(&mut self, x: Var, rate: f64, rng: &mut Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::DropoutRate(rate));
        }
        if rate == 0.0 {
            return Ok(x);
        }
        let keep = T::of(1.0 / (1.0 - rate));
        let xv = self.value(x);
        let mut mask = xv.zeros_like();
        for m in mask.data_mut() {
            if rng::uniform(rng) >= rate {
                *m = keep;
            }
        }
        let v = xv.mul(&mask)?;
        Ok(self.push(v, Op::Dropout { x, mask }))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let v = kernels::softmax(self.value(x), axis)?;
        Ok(self.push(v, Op::Softmax { x, axis }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(v, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).mean());
        self.push(v, Op::Mean(x))
    }

    /// `[n,h,w,c] -> [n,c]`
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let [n, h, w, c] = *xv.shape() else {
            return Err(TensorError::Config(alloc::format!("pooling needs NHWC input, got {:?}", xv.shape())));
        };
        let inv = T::of(1.0 / (h * w) as f64);
        let mut out = vec![T::zero(); n * c];
        for (b, img) in xv.data().chunks(h * w * c).enumerate() {
            for px in img.chunks(c) {
                for (o, &v) in out[b * c..(b + 1) * c].iter_mut().zip(px) {
                    *o += v;
                }
            }
        }
        out.iter_mut().for_each(|o| *o *= inv);
        let v = Tensor::from_vec(&[n, c], out)?;
        Ok(self.push(v, Op::GlobalAvgPool(x)))
    }

    /// Capsule squash over the last axis.
    pub fn squash(&mut self, x: Var, eps: T) -> Var {
        let v = kernels::squash(self.value(x), eps);
        self.push(v, Op::Squash { x, eps })
    }

    /// Euclidean norm over the last axis; drops that axis.
    pub fn norm_last(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let shape = &xv.shape()[..xv.rank().saturating_sub(1)];
        let v = Tensor::from_vec(shape, kernels::last_axis_norms(xv))?;
        Ok(self.push(v, Op::Norm(x)))
    }

    pub fn predict_votes(&mut self, u: Var, w: Var) -> Result<Var> {
        let v = kernels::predict_votes(self.value(u), self.value(w))?;
        Ok(self.push(v, Op::PredictVotes { u, w }))
    }

    pub fn weighted_vote_sum(&mut self, c: Var, votes: Var) -> Result<Var> {
        let v = kernels::weighted_vote_sum(self.value(c), self.value(votes))?;
        Ok(self.push(v, Op::WeightedVoteSum { c, votes }))
    }

    pub fn agreement(&mut self, v: Var, votes: Var) -> Result<Var> {
        let a = kernels::agreement(self.value(v), self.value(votes))?;
        Ok(self.push(a, Op::Agreement { v, votes }))
    }

    /// Batch-mean margin loss over `[batch, K]` capsule lengths.
    pub fn margin_loss(&mut self, lengths: Var, targets: &Tensor<T>, cfg: MarginLossConfig) -> Result<Var> {
        let value = loss::margin_loss_value(self.value(lengths), targets, &cfg)?;
        Ok(self.push(Tensor::scalar(value), Op::MarginLoss { lengths, targets: targets.clone(), cfg }))
    }

    /// Summed log-cosh loss.
    pub fn logcosh_loss(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        let value = loss::logcosh_value(self.value(pred), target)?;
        Ok(self.push(Tensor::scalar(value), Op::LogCosh { pred, target: target.clone() }))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(lv.map(|_| T::one()));
        let mut leaves = BTreeMap::new();
        let mut params: BTreeMap<ParamId, Tensor<T>> = BTreeMap::new();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf { param } => {
                    if let Some(id) = param {
                        accumulate_into(params.entry(*id), g.clone());
                    }
                    leaves.insert(Var(idx), g);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.scale(-T::one()));
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.mul(self.value(*b))?;
                    let gb = g.mul(self.value(*a))?;
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::AddScalar(a) => acc(&mut grads, *a, g),
                Op::Scale(a, k) => acc(&mut grads, *a, g.scale(*k)),
                Op::Relu6(a) => {
                    let six = T::of(6.0);
                    let ga = g.zip_map(self.value(*a), |gv, x| if x > T::zero() && x < six { gv } else { T::zero() })?;
                    acc(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let ga = g.zip_map(&node.value, |gv, y| gv * y * (T::one() - y))?;
                    acc(&mut grads, *a, ga);
                }
                Op::MatMul(a, b) => {
                    let (ga, gb) = kernels::matmul_backward(self.value(*a), self.value(*b), &g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Conv2d { x, k, geom } => {
                    let (gx, gk) = kernels::conv2d_backward(self.value(*x), self.value(*k), &g, geom);
                    acc(&mut grads, *x, gx);
                    acc(&mut grads, *k, gk);
                }
                Op::Depthwise { x, k, geom } => {
                    let (gx, gk) = kernels::depthwise_conv2d_backward(self.value(*x), self.value(*k), &g, geom);
                    acc(&mut grads, *x, gx);
                    acc(&mut grads, *k, gk);
                }
                Op::BiasAdd { x, b } => {
                    let c = self.value(*b).len();
                    let mut gb = vec![T::zero(); c];
                    for row in g.data().chunks(c) {
                        for (o, &v) in gb.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    acc(&mut grads, *b, Tensor::from_vec(&[c], gb)?);
                    acc(&mut grads, *x, g);
                }
                Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats } => {
                    let c = inv_std.len();
                    let count = g.len() / c;
                    let mut sum_g = vec![T::zero(); c];
                    let mut sum_gx = vec![T::zero(); c];
                    for (grow, xrow) in g.data().chunks(c).zip(xhat.data().chunks(c)) {
                        for ch in 0..c {
                            sum_g[ch] += grow[ch];
                            sum_gx[ch] += grow[ch] * xrow[ch];
                        }
                    }
                    let gam = self.value(*gamma).data();
                    let mut gx = g.clone();
                    if *batch_stats {
                        let n = T::of(count as f64);
                        for (orow, xrow) in gx.data_mut().chunks_mut(c).zip(xhat.data().chunks(c)) {
                            for ch in 0..c {
                                let k = gam[ch] * inv_std[ch] / n;
                                orow[ch] = k * (n * orow[ch] - sum_g[ch] - xrow[ch] * sum_gx[ch]);
                            }
                        }
                    } else {
                        for orow in gx.data_mut().chunks_mut(c) {
                            for ch in 0..c {
                                orow[ch] *= gam[ch] * inv_std[ch];
                            }
                        }
                    }
                    acc(&mut grads, *gamma, Tensor::from_vec(&[c], sum_gx)?);
                    acc(&mut grads, *beta, Tensor::from_vec(&[c], sum_g)?);
                    acc(&mut grads, *x, gx);
                }
                Op::Reshape(x) => {
                    let shape = self.value(*x).shape().to_vec();
                    acc(&mut grads, *x, g.with_shape(&shape));
                }
                Op::Dropout { x, mask } => acc(&mut grads, *x, g.mul(mask)?),
                Op::Softmax { x, axis } => acc(&mut grads, *x, kernels::softmax_backward(&node.value, &g, *axis)),
                Op::Sum(x) => {
                    let gv = g.data()[0];
                    acc(&mut grads, *x, self.value(*x).map(|_| gv));
                }
                Op::Mean(x) => {
                    let xv = self.value(*x);
                    let gv = g.data()[0] / T::of(xv.len() as f64);
                    acc(&mut grads, *x, xv.map(|_| gv));
                }
                Op::GlobalAvgPool(x) => {
                    let xv = self.value(*x);
                    let [_, h, w, c] = *xv.shape() else { unreachable!() };
                    let inv = T::of(1.0 / (h * w) as f64);
                    let mut gx = xv.zeros_like();
                    for (b, img) in gx.data_mut().chunks_mut(h * w * c).enumerate() {
                        let grow = &g.data()[b * c..(b + 1) * c];
                        for px in img.chunks_mut(c) {
                            for (o, &gv) in px.iter_mut().zip(grow) {
                                *o = gv * inv;
                            }
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::Squash { x, eps } => acc(&mut grads, *x, kernels::squash_backward(self.value(*x), &g, *eps)),
                Op::Norm(x) => {
                    let xv = self.value(*x);
                    let d = *xv.shape().last().unwrap_or(&1);
                    let mut gx = xv.zeros_like();
                    for ((orow, xrow), (&gv, &n)) in
                        gx.data_mut().chunks_mut(d).zip(xv.data().chunks(d)).zip(g.data().iter().zip(node.value.data()))
                    {
                        if n > T::zero() {
                            for (o, &xx) in orow.iter_mut().zip(xrow) {
                                *o = gv * xx / n;
                            }
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::PredictVotes { u, w } => {
                    let (gu, gw) = kernels::predict_votes_backward(self.value(*u), self.value(*w), &g);
                    acc(&mut grads, *u, gu);
                    acc(&mut grads, *w, gw);
                }
                Op::WeightedVoteSum { c, votes } => {
                    let (gc, gv) = kernels::weighted_vote_sum_backward(self.value(*c), self.value(*votes), &g);
                    acc(&mut grads, *c, gc);
                    acc(&mut grads, *votes, gv);
                }
                Op::Agreement { v, votes } => {
                    let (gv, gu) = kernels::agreement_backward(self.value(*v), self.value(*votes), &g);
                    acc(&mut grads, *v, gv);
                    acc(&mut grads, *votes, gu);
                }
                Op::MarginLoss { lengths, targets, cfg } => {
                    let gl = loss::margin_loss_grad(self.value(*lengths), targets, cfg).scale(g.data()[0]);
                    acc(&mut grads, *lengths, gl);
                }
                Op::LogCosh { pred, target } => {
                    let gp = loss::logcosh_grad(self.value(*pred), target).scale(g.data()[0]);
                    acc(&mut grads, *pred, gp);
                }
            }
        }
        Ok(Gradients { leaves, params })
    }
}

fn acc<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g).expect("gradient shape matches node"),
        slot @ None => *slot = Some(g),
    }
}

fn accumulate_into<T: Real>(entry: alloc::collections::btree_map::Entry<'_, ParamId, Tensor<T>>, g: Tensor<T>) {
    use alloc::collections::btree_map::Entry;
    match entry {
        Entry::Occupied(mut e) => e.get_mut().add_assign(&g).expect("parameter gradient shape"),
        Entry::Vacant(e) => {
            e.insert(g);
        }
    }
}

/// Result of [`Tape::backward`].
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    leaves: BTreeMap<Var, Tensor<T>>,
    params: BTreeMap<ParamId, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient reaching a leaf node, if any path connects it to the loss.
    pub fn of(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaves.get(&v)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(&id)
    }

    /// Parameter gradient, zeros when the parameter did not reach the loss.
    pub fn param_or_zeros(&self, id: ParamId, store: &ParamStore<T>) -> Tensor<T> {
        self.params.get(&id).cloned().unwrap_or_else(|| store.value(id).zeros_like())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn elementwise_examples() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[3], &[1., 2., 3.]));
        let y = tape.leaf(t(&[3], &[4., 5., 6.]));
        let z = tape.elementwise(Elementwise::Add, x, Operand::Scalar(0.0)).unwrap();
        assert_eq!(tape.value(z), tape.value(x));
        let m = tape.elementwise(Elementwise::Mul, x, Operand::Var(y)).unwrap();
        assert_eq!(tape.value(m).data(), &[4., 10., 18.]);
        let r = tape.leaf(t(&[2], &[7.0, -1.0]));
        let r6 = tape.relu6(r);
        assert_eq!(tape.value(r6).data(), &[6.0, 0.0]);
        let bad = tape.leaf(t(&[2], &[1., 1.]));
        assert!(matches!(tape.add(x, bad), Err(TensorError::ShapeMismatch { .. })));
    }

    #[test]
    fn backward_examples() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[3], &[1., -2., 0.5]));
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.of(x).unwrap().data(), &[1., 1., 1.]);

        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[2], &[1., 2.]));
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq);
        assert_eq!(tape.backward(s).unwrap().of(x).unwrap().data(), &[2., 4.]);
    }

    #[test]
    fn unreachable_parameter_gets_zeros() {
        let mut store = ParamStore::<f64>::new();
        let a = store.add("a", t(&[2], &[1., 2.]), true).unwrap();
        let b = store.add("b", t(&[2], &[3., 4.]), true).unwrap();
        let mut tape = Tape::new();
        let av = tape.param(&store, a);
        let _bv = tape.param(&store, b);
        let s = tape.sum(av);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.param_or_zeros(b, &store).data(), &[0., 0.]);
        assert_eq!(g.param_or_zeros(a, &store).data(), &[1., 1.]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[2], &[1., 2.]));
        assert!(matches!(tape.backward(x), Err(TensorError::NonScalarLoss(_))));
    }

    #[test]
    fn dropout_modes() {
        let mut rng = crate::rng::seeded(1);
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[4], &[1., 2., 3., 4.]));
        assert_eq!(tape.dropout(x, 0.0, &mut rng).unwrap(), x);
        assert!(matches!(tape.dropout(x, 1.0, &mut rng), Err(TensorError::DropoutRate(_))));
        assert!(tape.dropout(x, -0.1, &mut rng).is_err());
    }

    #[test]
    fn batch_norm_hand_case() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[2, 1], &[1., 3.]));
        let g = tape.leaf(t(&[1], &[1.]));
        let b = tape.leaf(t(&[1], &[0.]));
        let (y, stats) = tape.batch_norm_train(x, g, b, 0.0).unwrap();
        assert_eq!(tape.value(y).data(), &[-1., 1.]);
        assert_eq!(stats.mean, vec![2.0]);
        assert_eq!(stats.var, vec![1.0]);

        let b5 = tape.leaf(t(&[1], &[5.]));
        let (y, _) = tape.batch_norm_train(x, g, b5, 0.0).unwrap();
        assert_eq!(tape.value(y).mean(), 5.0);
    }
}
