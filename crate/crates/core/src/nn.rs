//! Layers over the tape and the per-forward context they share.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::autodiff::{BatchStats, ParamId, ParamStore, Tape, Var};
use crate::kernels::Padding;
use crate::rng::{self, Rng};
use crate::tensor::{Real, Result, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// What capsule layers do with their routing coefficients.
///
/// `Record` stores the coefficients each layer computed, `Replay` feeds
/// previously recorded ones back in. Replaying lets a finite-difference
/// check see the same frozen-coefficient function that the detached
/// gradient differentiates.
#[derive(Clone, Debug, Default)]
pub enum Couplings<T> {
    #[default]
    Compute,
    Record(Vec<Tensor<T>>),
    Replay { coeffs: Vec<Tensor<T>>, next: usize },
}

/// Everything one forward pass needs besides its input.
pub struct Ctx<'a, T> {
    pub tape: Tape<T>,
    pub store: &'a ParamStore<T>,
    pub mode: Mode,
    rng: Option<&'a mut Rng>,
    bn_updates: Vec<(BatchNorm, BatchStats<T>)>,
    pub couplings: Couplings<T>,
}

impl<'a, T: Real> Ctx<'a, T> {
    pub fn new(store: &'a ParamStore<T>, mode: Mode, rng: Option<&'a mut Rng>) -> Self {
        Ctx { tape: Tape::new(), store, mode, rng, bn_updates: Vec::new(), couplings: Couplings::Compute }
    }

    pub fn infer(store: &'a ParamStore<T>) -> Self {
        Self::new(store, Mode::Infer, None)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.tape.param(self.store, id)
    }

    pub fn rng(&mut self) -> Result<&mut Rng> {
        self.rng.as_deref_mut().ok_or(TensorError::MissingRng)
    }

    /// Running-statistic updates gathered from train-mode batch norms.
    pub fn take_bn_updates(&mut self) -> Vec<(BatchNorm, BatchStats<T>)> {
        core::mem::take(&mut self.bn_updates)
    }

    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::DropoutRate(rate));
        }
        if self.mode == Mode::Infer || rate == 0.0 {
            return Ok(x);
        }
        let rng = self.rng.as_deref_mut().ok_or(TensorError::MissingRng)?;
        self.tape.dropout(x, rate, rng)
    }
}

/// He-style fan-in normal initialisation.
pub fn he_normal<T: Real>(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Result<Tensor<T>> {
    normal(shape, libm::sqrt(2.0 / fan_in as f64), rng)
}

pub fn normal<T: Real>(shape: &[usize], std: f64, rng: &mut Rng) -> Result<Tensor<T>> {
    let mut t = Tensor::zeros(shape)?;
    for v in t.data_mut() {
        *v = T::of(std * rng::normal(rng));
    }
    Ok(t)
}

/// Bias-free 2-D convolution with kernel `[k, k, c_in, c_out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub padding: Padding,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        kernel: usize,
        cin: usize,
        cout: usize,
        stride: usize,
        bias: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), he_normal(&[kernel, kernel, cin, cout], kernel * kernel * cin, rng)?, true)?;
        let bias = if bias { Some(store.add(format!("{name}.bias"), Tensor::zeros(&[cout])?, true)?) } else { None };
        Ok(Conv2d { weight, bias, stride, padding: Padding::Same })
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let k = ctx.param(self.weight);
        let y = ctx.tape.conv2d(x, k, self.stride, self.padding)?;
        match self.bias {
            Some(b) => {
                let b = ctx.param(b);
                ctx.tape.bias_add(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Depthwise convolution with kernel `[k, k, c]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthwiseConv2d {
    pub weight: ParamId,
    pub stride: usize,
    pub padding: Padding,
}

impl DepthwiseConv2d {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, kernel: usize, channels: usize, stride: usize, rng: &mut Rng) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), he_normal(&[kernel, kernel, channels], kernel * kernel, rng)?, true)?;
        Ok(DepthwiseConv2d { weight, stride, padding: Padding::Same })
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let k = ctx.param(self.weight);
        ctx.tape.depthwise_conv2d(x, k, self.stride, self.padding)
    }
}

pub const BN_EPS: f64 = 1e-5;
/// Weight of the previous running average in each update.
pub const BN_DECAY: f64 = 0.9;

/// Batch normalisation over all leading axes, with running statistics kept
/// as non-trainable parameters so they travel with checkpoints.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        Ok(BatchNorm {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[channels])?, true)?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels])?, true)?,
            running_mean: store.add(format!("{name}.running_mean"), Tensor::zeros(&[channels])?, false)?,
            running_var: store.add(format!("{name}.running_var"), Tensor::ones(&[channels])?, false)?,
        })
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let gamma = ctx.param(self.gamma);
        let beta = ctx.param(self.beta);
        let eps = T::of(BN_EPS);
        match ctx.mode {
            Mode::Train => {
                let (y, stats) = ctx.tape.batch_norm_train(x, gamma, beta, eps)?;
                ctx.bn_updates.push((*self, stats));
                Ok(y)
            }
            Mode::Infer => {
                let mean = ctx.store.value(self.running_mean).data();
                let var = ctx.store.value(self.running_var).data();
                ctx.tape.batch_norm_infer(x, gamma, beta, mean, var, eps)
            }
        }
    }
}

/// Folds batch statistics into the running averages.
pub fn apply_bn_updates<T: Real>(store: &mut ParamStore<T>, updates: &[(BatchNorm, BatchStats<T>)], decay: f64) {
    let (d, nd) = (T::of(decay), T::of(1.0 - decay));
    for (bn, stats) in updates {
        for (r, &b) in store.get_mut(bn.running_mean).value.data_mut().iter_mut().zip(&stats.mean) {
            *r = d * *r + nd * b;
        }
        for (r, &b) in store.get_mut(bn.running_var).value.data_mut().iter_mut().zip(&stats.var) {
            *r = d * *r + nd * b;
        }
    }
}

/// Fully connected layer `x W + b` over `[batch, in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, din: usize, dout: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Dense {
            weight: store.add(format!("{name}.weight"), he_normal(&[din, dout], din, rng)?, true)?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[dout])?, true)?,
        })
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        let b = ctx.param(self.bias);
        let y = ctx.tape.matmul(x, w)?;
        ctx.tape.bias_add(y, b)
    }
}

/// Checks a tensor's channel extent against what a layer expects.
pub(crate) fn expect_channels<T: Real>(tape: &Tape<T>, x: Var, channels: usize, what: &str) -> Result<()> {
    let got = *tape.value(x).shape().last().unwrap_or(&0);
    if got != channels {
        return Err(TensorError::Config(format!("{what} expects {channels} input channels, got {got}")));
    }
    Ok(())
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.into()
    } else {
        format!("{prefix}.{name}")
    }
}
