//! Finite-difference checks of the tape's gradients: every differentiable
//! op on random inputs, and the training loss of a whole model.
//!
//! Each op is reduced to a scalar with a fixed random projection
//! `sum(op(x) * r)`, so every output element contributes with its own
//! weight.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{directional_check, finite_diff_check, GradCheckOptions, GradCheckReport, ParamId, ParamStore, Tape, Var};
use crate::capsnet::{CapsuleLayer, CapsuleLayerConfig, RoutingGrad};
use crate::kernels::Padding;
use crate::loss::{one_hot, MarginLossConfig};
use crate::model::{Model, ModelConfig, Task};
use crate::nn::{Couplings, Ctx, Mode};
use crate::rng::{self, Rng};
use crate::tensor::{Result, Tensor};
use crate::trainer::LossKind;

/// Result of checking one input of one op.
#[derive(Clone, Debug, PartialEq)]
pub struct OpCheck {
    pub op: String,
    pub input: usize,
    pub report: GradCheckReport,
}

type Build = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

struct Case {
    name: String,
    /// Shape and sampling range of every input.
    inputs: Vec<(Vec<usize>, f64, f64)>,
    build: Build,
}

fn case(name: &str, inputs: &[(&[usize], f64, f64)], build: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'static) -> Case {
    Case { name: name.into(), inputs: inputs.iter().map(|(s, lo, hi)| (s.to_vec(), *lo, *hi)).collect(), build: Box::new(build) }
}

const UNIT: (f64, f64) = (-1.0, 1.0);

fn u(shape: &[usize]) -> (&[usize], f64, f64) {
    (shape, UNIT.0, UNIT.1)
}

fn random(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> Result<Tensor<f64>> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng::uniform_in(rng, lo, hi)).collect())
}

fn cases(rng: &mut Rng) -> Result<Vec<Case>> {
    let margin_targets: Tensor<f64> = one_hot(&[0, 2, 1], 4)?;
    let logcosh_targets = random(&[5], -1.0, 1.0, rng)?;
    let bn_mean = random(&[3], -0.5, 0.5, rng)?.into_data();
    let bn_var = random(&[3], 0.5, 1.5, rng)?.into_data();
    let conv = |name: &str, x: &'static [usize], k: &'static [usize], stride: usize, padding: Padding| {
        case(name, &[u(x), u(k)], move |t, v| t.conv2d(v[0], v[1], stride, padding))
    };
    let depthwise = |name: &str, x: &'static [usize], k: &'static [usize], stride: usize, padding: Padding| {
        case(name, &[u(x), u(k)], move |t, v| t.depthwise_conv2d(v[0], v[1], stride, padding))
    };
    let layer = |full: bool| -> Result<CapsuleLayer> {
        let mut store = ParamStore::<f64>::new();
        let cfg = CapsuleLayerConfig { in_caps: 4, in_dim: 3, out_caps: 3, out_dim: 2, routing_iters: 3, share_groups: 2 };
        let grad = if full { RoutingGrad::Full } else { RoutingGrad::Detached };
        CapsuleLayer::new(&mut store, "caps", cfg, grad, &mut rng::seeded(0))
    };
    let full_layer = layer(true)?;
    Ok(vec![
        case("add", &[u(&[2, 3]), u(&[2, 3])], |t, v| t.add(v[0], v[1])),
        case("sub", &[u(&[2, 3]), u(&[2, 3])], |t, v| t.sub(v[0], v[1])),
        case("mul", &[u(&[2, 3]), u(&[2, 3])], |t, v| t.mul(v[0], v[1])),
        case("add_scalar", &[u(&[2, 3])], |t, v| Ok(t.add_scalar(v[0], 0.7))),
        case("scale", &[u(&[2, 3])], |t, v| Ok(t.scale(v[0], -1.3))),
        case("relu6", &[(&[4, 5], -8.0, 8.0)], |t, v| Ok(t.relu6(v[0]))),
        case("sigmoid", &[(&[4, 5], -3.0, 3.0)], |t, v| Ok(t.sigmoid(v[0]))),
        case("matmul", &[u(&[3, 4]), u(&[4, 2])], |t, v| t.matmul(v[0], v[1])),
        conv("conv2d_same_s1", &[2, 5, 5, 3], &[3, 3, 3, 4], 1, Padding::Same),
        conv("conv2d_same_s2", &[1, 6, 6, 2], &[3, 3, 2, 3], 2, Padding::Same),
        conv("conv2d_valid_s1", &[1, 5, 4, 2], &[2, 3, 2, 2], 1, Padding::Valid),
        conv("conv2d_valid_s2", &[1, 7, 7, 2], &[3, 3, 2, 2], 2, Padding::Valid),
        conv("conv2d_1x1", &[2, 3, 3, 4], &[1, 1, 4, 3], 1, Padding::Same),
        depthwise("depthwise_same_s1", &[2, 5, 5, 3], &[3, 3, 3], 1, Padding::Same),
        depthwise("depthwise_same_s2", &[1, 6, 6, 2], &[3, 3, 2], 2, Padding::Same),
        depthwise("depthwise_valid_s1", &[1, 5, 5, 2], &[3, 3, 2], 1, Padding::Valid),
        case("bias_add", &[u(&[2, 3, 3, 4]), u(&[4])], |t, v| t.bias_add(v[0], v[1])),
        case("batch_norm_train", &[u(&[4, 2, 2, 3]), u(&[3]), u(&[3])], |t, v| Ok(t.batch_norm_train(v[0], v[1], v[2], 1e-5)?.0)),
        case("batch_norm_infer", &[u(&[4, 2, 2, 3]), u(&[3]), u(&[3])], move |t, v| {
            t.batch_norm_infer(v[0], v[1], v[2], &bn_mean, &bn_var, 1e-5)
        }),
        case("reshape", &[u(&[2, 3, 4])], |t, v| t.reshape(v[0], &[6, 4])),
        case("dropout", &[u(&[3, 5])], |t, v| t.dropout(v[0], 0.3, &mut rng::seeded(11))),
        case("softmax_axis0", &[(&[3, 4], -2.0, 2.0)], |t, v| t.softmax(v[0], 0)),
        case("softmax_axis1", &[(&[3, 4], -2.0, 2.0)], |t, v| t.softmax(v[0], 1)),
        case("softmax_axis2", &[(&[2, 3, 4], -2.0, 2.0)], |t, v| t.softmax(v[0], 2)),
        case("sum", &[u(&[3, 4])], |t, v| Ok(t.sum(v[0]))),
        case("mean", &[u(&[3, 4])], |t, v| Ok(t.mean(v[0]))),
        case("global_avg_pool", &[u(&[2, 3, 3, 4])], |t, v| t.global_avg_pool(v[0])),
        case("squash", &[u(&[2, 3, 4])], |t, v| Ok(t.squash(v[0], 1e-7))),
        case("norm_last", &[u(&[2, 3, 4])], |t, v| t.norm_last(v[0])),
        case("predict_votes_shared", &[u(&[2, 4, 3]), u(&[2, 3, 3, 2])], |t, v| t.predict_votes(v[0], v[1])),
        case("predict_votes_per_capsule", &[u(&[2, 3, 4]), u(&[3, 2, 4, 5])], |t, v| t.predict_votes(v[0], v[1])),
        case("weighted_vote_sum", &[(&[2, 3, 2], 0.0, 1.0), u(&[2, 3, 2, 4])], |t, v| t.weighted_vote_sum(v[0], v[1])),
        case("agreement", &[u(&[2, 2, 4]), u(&[2, 3, 2, 4])], |t, v| t.agreement(v[0], v[1])),
        case("margin_loss", &[(&[3, 4], 0.0, 0.99)], move |t, v| t.margin_loss(v[0], &margin_targets, MarginLossConfig::default())),
        case("logcosh_loss", &[(&[5], -3.0, 3.0)], move |t, v| t.logcosh_loss(v[0], &logcosh_targets)),
        case("routing_full", &[(&[2, 4, 3], -0.5, 0.5), u(&[2, 3, 3, 2])], move |t, v| {
            let store = ParamStore::new();
            let mut ctx = Ctx::new(&store, Mode::Infer, None);
            ctx.tape = core::mem::take(t);
            let out = full_layer.forward_with_weight(&mut ctx, v[0], v[1]);
            *t = core::mem::take(&mut ctx.tape);
            out
        }),
    ])
}

/// Checks every input of every differentiable op with inputs drawn from
/// `seed`.
pub fn check_ops(seed: u64, opts: &GradCheckOptions) -> Result<Vec<OpCheck>> {
    let mut rng = rng::derive(seed, 0x9c);
    let mut out = Vec::new();
    for c in cases(&mut rng)? {
        let mut store = ParamStore::<f64>::new();
        let ids: Vec<ParamId> = c
            .inputs
            .iter()
            .enumerate()
            .map(|(i, (shape, lo, hi))| store.add(format!("in{i}"), random(shape, *lo, *hi, &mut rng)?, true))
            .collect::<Result<_>>()?;
        let probe = {
            let mut tape = Tape::new();
            let vars: Vec<Var> = ids.iter().map(|&id| tape.param(&store, id)).collect();
            let y = (c.build)(&mut tape, &vars)?;
            random(tape.value(y).shape(), -1.0, 1.0, &mut rng)?
        };
        for (input, &id) in ids.iter().enumerate() {
            let report = finite_diff_check(&mut store, id, opts, |s, tape| {
                let vars: Vec<Var> = ids.iter().map(|&id| tape.param(s, id)).collect();
                let y = (c.build)(tape, &vars)?;
                let r = tape.leaf(probe.clone());
                let weighted = tape.mul(y, r)?;
                Ok(tape.sum(weighted))
            })?;
            out.push(OpCheck { op: c.name.clone(), input, report });
        }
    }
    Ok(out)
}

fn unit_direction(shape: &[usize], rng: &mut Rng) -> Result<Tensor<f64>> {
    let mut d = Tensor::zeros(shape)?;
    for v in d.data_mut() {
        *v = rng::normal(rng);
    }
    let n = libm::sqrt(d.data().iter().map(|v| v * v).sum::<f64>());
    Ok(d.scale(1.0 / n))
}

/// Checks the training loss of a freshly initialised `config` model on a
/// random batch of `batch` images along `directions` random unit
/// directions in each trainable parameter. Dropout masks and routing coefficients are
/// held fixed across evaluations, which is the function the detached
/// gradient differentiates.
pub fn check_model_loss(config: &ModelConfig, kind: LossKind, seed: u64, batch: usize, directions: usize, opts: &GradCheckOptions) -> Result<Vec<(String, GradCheckReport)>> {
    let model = Model::<f64>::new(config.clone(), seed)?;
    let mut rng = rng::derive(seed, 0x6c);
    let [h, w, c] = config.input_shape();
    let images = random(&[batch, h, w, c], 0.0, 1.0, &mut rng)?;
    let target: Tensor<f64> = match config.task {
        Task::Classify { classes } => one_hot(&(0..batch).map(|_| rng::index(&mut rng, classes)).collect::<Vec<_>>(), classes)?,
        Task::Severity => random(&[batch, 1], 0.0, 1.0, &mut rng)?,
    };
    let dropout_seed = rng::next_u64(&mut rng);
    let forward = |s: &ParamStore<f64>, couplings: Couplings<f64>| -> Result<(Tape<f64>, Var, Couplings<f64>)> {
        let mut drop_rng = rng::seeded(dropout_seed);
        let mut ctx = Ctx::new(s, Mode::Train, Some(&mut drop_rng));
        ctx.couplings = couplings;
        let x = ctx.tape.leaf(images.clone());
        let scores = model.forward(&mut ctx, x)?;
        let loss = match kind {
            LossKind::Margin => ctx.tape.margin_loss(scores, &target, MarginLossConfig::default())?,
            LossKind::Logcosh => ctx.tape.logcosh_loss(scores, &target)?,
        };
        let couplings = core::mem::take(&mut ctx.couplings);
        Ok((core::mem::take(&mut ctx.tape), loss, couplings))
    };
    let recorded = match forward(&model.store, Couplings::Record(Vec::new()))?.2 {
        Couplings::Record(list) => list,
        _ => unreachable!("recording context stays in record mode"),
    };
    let replay = || Couplings::Replay { coeffs: recorded.clone(), next: 0 };
    let (tape, loss, _) = forward(&model.store, replay())?;
    let f0 = tape.value(loss).data()[0];
    let grads = tape.backward(loss)?;
    drop(tape);
    let mut store = model.store.clone();
    let ids: Vec<ParamId> = store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let grad = grads.param_or_zeros(id, &store);
        let directions = (0..directions).map(|_| unit_direction(grad.shape(), &mut rng)).collect::<Result<Vec<_>>>()?;
        let report = directional_check(&mut store, id, &grad, &directions, f0, opts, |s| {
            let (t, loss, _) = forward(s, replay())?;
            Ok(t.value(loss).data()[0])
        })?;
        out.push((store.get(id).name.clone(), report));
    }
    Ok(out)
}
