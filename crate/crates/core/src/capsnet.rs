//! Capsule layers with routing by agreement.
//!
//! A lower capsule `u_i` predicts each upper capsule through a weight matrix,
//! `u_hat[j|i] = u_i . W_ij`. Routing starts from uniform logits `b = 0`
//! and repeats `r` times:
//!
//! ```text
//! c_ij = softmax_j(b_ij)
//! s_j  = sum_i c_ij u_hat[j|i]
//! v_j  = squash(s_j)
//! b_ij += v_j . u_hat[j|i]        (skipped after the last iteration)
//! ```

use alloc::format;
use alloc::vec::Vec;

use crate::autodiff::{ParamId, ParamStore, Var};
use crate::kernels;
use crate::nn::{self, Couplings, Ctx};
use crate::rng::Rng;
use crate::tensor::{Real, Result, Tensor, TensorError};

/// Regulariser added to `|s|` in the squash denominator.
pub const SQUASH_EPS: f64 = 1e-7;

pub fn squash<T: Real>(s: &Tensor<T>) -> Tensor<T> {
    kernels::squash(s, T::of(SQUASH_EPS))
}

/// Euclidean length of every capsule: `[batch, K, dim] -> [batch, K]`.
pub fn capsule_lengths<T: Real>(v: &Tensor<T>) -> Result<Tensor<T>> {
    let shape = v.shape();
    if shape.len() < 2 {
        return Err(TensorError::Config(format!("capsules need a vector axis, got {shape:?}")));
    }
    Tensor::from_vec(&shape[..shape.len() - 1], kernels::last_axis_norms(v))
}

/// `u: [batch, I, in_dim]`, `w: [g, J, in_dim, out_dim]` to votes
/// `[batch, I, J, out_dim]`; capsule `i` uses weight group `i mod g`.
pub fn predict_votes<T: Real>(u: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>> {
    kernels::predict_votes(u, w)
}

/// Scratch state of one routing call.
#[derive(Clone, Debug, PartialEq)]
pub struct RoutingState<T> {
    /// `b`, `[batch, I, J]`: the logits the coefficients were computed from.
    pub logits: Tensor<T>,
    /// `c`, `[batch, I, J]`; sums to one over `J`.
    pub coefficients: Tensor<T>,
    /// `u_hat`, `[batch, I, J, dim]`.
    pub votes: Tensor<T>,
    /// `s`, `[batch, J, dim]`.
    pub pre_activations: Tensor<T>,
    /// `v`, `[batch, J, dim]`.
    pub outputs: Tensor<T>,
}

pub fn dynamic_routing<T: Real>(votes: &Tensor<T>, iterations: usize) -> Result<RoutingState<T>> {
    dynamic_routing_observed(votes, iterations, |_, _| {})
}

/// Routing that hands the state after every iteration to `observe`.
pub fn dynamic_routing_observed<T: Real>(
    votes: &Tensor<T>,
    iterations: usize,
    mut observe: impl FnMut(usize, &RoutingState<T>),
) -> Result<RoutingState<T>> {
    if iterations == 0 {
        return Err(TensorError::Config("routing needs at least one iteration".into()));
    }
    let [b, i, j, _] = *votes.shape() else {
        return Err(TensorError::Config(format!("votes must be [batch, I, J, dim], got {:?}", votes.shape())));
    };
    let mut logits = Tensor::zeros(&[b, i, j])?;
    for it in 0..iterations {
        let coefficients = kernels::softmax(&logits, 2)?;
        let pre_activations = kernels::weighted_vote_sum(&coefficients, votes)?;
        let outputs = squash(&pre_activations);
        let state = RoutingState { logits, coefficients, votes: votes.clone(), pre_activations, outputs };
        observe(it, &state);
        if it + 1 == iterations {
            return Ok(state);
        }
        logits = state.logits.add(&kernels::agreement(&state.outputs, votes)?)?;
    }
    unreachable!("loop returns on its last iteration")
}

/// Reshapes `[batch, h, w, C]` into `[batch, h*w*(C/dim), dim]` without
/// squashing. Capsule index is `position * (C/dim) + type`.
pub fn primary_capsules_raw<T: Real>(feature_map: &Tensor<T>, dim: usize) -> Result<Tensor<T>> {
    let [b, h, w, c] = *feature_map.shape() else {
        return Err(TensorError::Config(format!("feature map must be NHWC, got {:?}", feature_map.shape())));
    };
    if dim == 0 || c % dim != 0 {
        return Err(TensorError::Config(format!("{c} channels are not divisible into capsules of dim {dim}")));
    }
    feature_map.reshape(&[b, h * w * (c / dim), dim])
}

pub fn primary_capsules<T: Real>(feature_map: &Tensor<T>, dim: usize) -> Result<Tensor<T>> {
    Ok(squash(&primary_capsules_raw(feature_map, dim)?))
}

/// Whether gradients see the routing coefficients.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum RoutingGrad {
    /// Coefficients are constants; only the final weighted sum is on the tape.
    #[default]
    Detached,
    /// The whole routing loop is recorded and differentiated.
    Full,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CapsuleLayerConfig {
    pub in_caps: usize,
    pub in_dim: usize,
    pub out_caps: usize,
    pub out_dim: usize,
    pub routing_iters: usize,
    /// Number of distinct weight stacks; capsule `i` uses stack `i mod share_groups`.
    pub share_groups: usize,
}

impl CapsuleLayerConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [self.in_caps, self.in_dim, self.out_caps, self.out_dim, self.share_groups];
        if dims.contains(&0) || self.routing_iters == 0 || !self.in_caps.is_multiple_of(self.share_groups) {
            return Err(TensorError::Config(format!("invalid capsule layer {self:?}")));
        }
        Ok(())
    }

    pub fn weight_count(&self) -> usize {
        self.share_groups * self.out_caps * self.in_dim * self.out_dim
    }
}

/// One routed capsule layer.
#[derive(Clone, Debug, PartialEq)]
pub struct CapsuleLayer {
    pub config: CapsuleLayerConfig,
    pub weight: ParamId,
    pub routing_grad: RoutingGrad,
}

impl CapsuleLayer {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, config: CapsuleLayerConfig, routing_grad: RoutingGrad, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let shape = [config.share_groups, config.out_caps, config.in_dim, config.out_dim];
        // Sized so that uniform couplings over inputs of length 0.5 give
        // unit-length totals; smaller weights vanish through stacked squashes.
        let std = 2.0 * config.out_caps as f64 / libm::sqrt((config.in_caps * config.out_dim) as f64);
        let weight = store.add(format!("{name}.weight"), nn::normal(&shape, std, rng)?, true)?;
        Ok(CapsuleLayer { config, weight, routing_grad })
    }

    /// `[batch, I, in_dim] -> [batch, J, out_dim]`
    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, u: Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        self.forward_with_weight(ctx, u, w)
    }

    pub(crate) fn forward_with_weight<T: Real>(&self, ctx: &mut Ctx<'_, T>, u: Var, w: Var) -> Result<Var> {
        let cfg = &self.config;
        let shape = ctx.tape.value(u).shape();
        if shape.len() != 3 || shape[1] != cfg.in_caps || shape[2] != cfg.in_dim {
            return Err(TensorError::Config(format!(
                "capsule layer expects [batch, {}, {}], got {shape:?}",
                cfg.in_caps, cfg.in_dim
            )));
        }
        let votes = ctx.tape.predict_votes(u, w)?;
        let eps = T::of(SQUASH_EPS);
        match self.routing_grad {
            RoutingGrad::Detached => {
                let coeffs = match &mut ctx.couplings {
                    Couplings::Replay { coeffs, next } => {
                        let c = coeffs
                            .get(*next)
                            .cloned()
                            .ok_or_else(|| TensorError::Config("no recorded coefficients left to replay".into()))?;
                        *next += 1;
                        c
                    }
                    _ => dynamic_routing(ctx.tape.value(votes), cfg.routing_iters)?.coefficients,
                };
                if let Couplings::Record(list) = &mut ctx.couplings {
                    list.push(coeffs.clone());
                }
                let c = ctx.tape.leaf(coeffs);
                let s = ctx.tape.weighted_vote_sum(c, votes)?;
                Ok(ctx.tape.squash(s, eps))
            }
            RoutingGrad::Full => {
                let batch = ctx.tape.value(u).shape()[0];
                let mut logits = ctx.tape.leaf(Tensor::zeros(&[batch, cfg.in_caps, cfg.out_caps])?);
                let mut out = None;
                for it in 0..cfg.routing_iters {
                    let c = ctx.tape.softmax(logits, 2)?;
                    let s = ctx.tape.weighted_vote_sum(c, votes)?;
                    let v = ctx.tape.squash(s, eps);
                    if it + 1 < cfg.routing_iters {
                        let a = ctx.tape.agreement(v, votes)?;
                        logits = ctx.tape.add(logits, a)?;
                    }
                    out = Some(v);
                }
                Ok(out.expect("at least one iteration"))
            }
        }
    }
}

/// Output of a capsule head.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum HeadKind {
    /// One capsule per class; lengths are class presence probabilities.
    Classifier { classes: usize },
    /// A single capsule whose length is the severity probability.
    Severity,
}

impl HeadKind {
    pub fn outputs(self) -> usize {
        match self {
            HeadKind::Classifier { classes } => classes,
            HeadKind::Severity => 1,
        }
    }
}

/// Sizes of a capsule head. The default trunk has two hidden layers of
/// 32 capsules of width 16 and 16-wide output capsules.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CapsuleHeadConfig {
    pub primary_dim: usize,
    /// `(capsules, dim)` of every hidden capsule layer.
    pub hidden: Vec<(usize, usize)>,
    pub output_dim: usize,
    pub routing_iters: usize,
    /// Weight stacks of the first routed layer; `None` shares one stack per
    /// primary capsule type across all spatial positions.
    pub primary_share_groups: Option<usize>,
    pub routing_grad: RoutingGrad,
}

impl CapsuleHeadConfig {
    pub fn standard(primary_dim: usize) -> Self {
        CapsuleHeadConfig {
            primary_dim,
            hidden: alloc::vec![(32, 16), (32, 16)],
            output_dim: 16,
            routing_iters: 3,
            primary_share_groups: None,
            routing_grad: RoutingGrad::Detached,
        }
    }
}

/// Primary capsules followed by routed capsule layers, ending in capsule
/// lengths.
#[derive(Clone, Debug, PartialEq)]
pub struct CapsuleHead {
    pub kind: HeadKind,
    pub primary_dim: usize,
    pub layers: Vec<CapsuleLayer>,
}

/// Builds the head for a `[h, w, channels]` feature map.
pub fn build_capsule_head<T: Real>(
    store: &mut ParamStore<T>,
    prefix: &str,
    kind: HeadKind,
    feature_shape: [usize; 3],
    cfg: &CapsuleHeadConfig,
    rng: &mut Rng,
) -> Result<CapsuleHead> {
    let [h, w, c] = feature_shape;
    if cfg.primary_dim == 0 || c % cfg.primary_dim != 0 {
        return Err(TensorError::Config(format!("{c} channels are not divisible into capsules of dim {}", cfg.primary_dim)));
    }
    let types = c / cfg.primary_dim;
    let mut in_caps = h * w * types;
    let mut in_dim = cfg.primary_dim;
    let mut sizes = cfg.hidden.clone();
    sizes.push((kind.outputs(), cfg.output_dim));
    let mut layers = Vec::with_capacity(sizes.len());
    for (idx, &(out_caps, out_dim)) in sizes.iter().enumerate() {
        let share_groups = if idx == 0 { cfg.primary_share_groups.unwrap_or(types) } else { in_caps };
        let layer_cfg = CapsuleLayerConfig { in_caps, in_dim, out_caps, out_dim, routing_iters: cfg.routing_iters, share_groups };
        let name = nn::join(prefix, &format!("caps{}", idx + 1));
        layers.push(CapsuleLayer::new(store, &name, layer_cfg, cfg.routing_grad, rng)?);
        in_caps = out_caps;
        in_dim = out_dim;
    }
    Ok(CapsuleHead { kind, primary_dim: cfg.primary_dim, layers })
}

impl CapsuleHead {
    /// Feature map `[batch, h, w, C]` to capsule lengths `[batch, outputs]`.
    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, feature_map: Var) -> Result<Var> {
        let v = self.forward_capsules(ctx, feature_map)?;
        ctx.tape.norm_last(v)
    }

    /// Output capsules `[batch, outputs, output_dim]` before taking lengths.
    pub fn forward_capsules<T: Real>(&self, ctx: &mut Ctx<'_, T>, feature_map: Var) -> Result<Var> {
        let raw = primary_capsules_raw(ctx.tape.value(feature_map), self.primary_dim)?;
        let shape = raw.shape().to_vec();
        let reshaped = ctx.tape.reshape(feature_map, &shape)?;
        let mut u = ctx.tape.squash(reshaped, T::of(SQUASH_EPS));
        for layer in &self.layers {
            u = layer.forward(ctx, u)?;
        }
        Ok(u)
    }

    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::new();
        if let Some(first) = self.layers.first() {
            dims.push((first.config.in_caps, first.config.in_dim));
        }
        dims.extend(self.layers.iter().map(|l| (l.config.out_caps, l.config.out_dim)));
        dims
    }
}
