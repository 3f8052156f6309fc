//! Mini-batch training with cyclic cosine annealing, Nadam and a snapshot
//! at the end of every cycle.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec::Vec;

use crate::autodiff::ParamStore;
use crate::data::{AugmentConfig, Dataset, Targets};
use crate::loss::{one_hot, MarginLossConfig};
use crate::metrics::{self, EvalReport};
use crate::model::{Model, Task};
use crate::nadam::{NadamConfig, NadamState};
use crate::nn::{apply_bn_updates, Ctx, Mode, BN_DECAY};
use crate::rng::{self, Rng};
use crate::schedule::{cosine_lr, ScheduleConfig};
use crate::tensor::{Result, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum LossKind {
    Margin,
    Logcosh,
}

impl LossKind {
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Classify { .. } => LossKind::Margin,
            Task::Severity => LossKind::Logcosh,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub schedule: ScheduleConfig,
    pub batch_size: usize,
    pub optimizer: NadamConfig,
    pub margin: MarginLossConfig,
    /// Defaults to margin loss for classification, log-cosh for severity.
    pub loss: Option<LossKind>,
    /// Fresh random augmentation of every training image each epoch.
    pub augment: Option<AugmentConfig>,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(schedule: ScheduleConfig, seed: u64) -> Self {
        TrainConfig {
            schedule,
            batch_size: 32,
            optimizer: NadamConfig::default(),
            margin: MarginLossConfig::default(),
            loss: None,
            augment: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.optimizer.validate()?;
        self.margin.validate()?;
        if self.batch_size == 0 {
            return Err(TensorError::Config("batch_size must be >= 1".into()));
        }
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        Ok(())
    }
}

/// Validation loss plus accuracy (classification) or R² (severity).
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Measured {
    pub loss: f64,
    pub accuracy: Option<f64>,
    pub r2: Option<f64>,
}

impl Measured {
    /// The number a search maximises: accuracy, else R², else `-loss`.
    pub fn score(&self) -> f64 {
        self.accuracy.or(self.r2).unwrap_or(-self.loss)
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Per-sample training loss over the epoch, in training mode.
    pub loss: f64,
    pub val: Option<Measured>,
}

#[derive(Clone, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub epoch: usize,
    pub cycle: usize,
    pub params: ParamStore<f32>,
    pub val: Option<Measured>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub snapshots: Vec<Snapshot>,
    pub history: History,
}

/// Training state at the moment the loss or a gradient went non-finite.
#[derive(Clone, Debug, PartialEq)]
pub struct Diverged {
    pub epoch: usize,
    pub batch: usize,
    pub snapshots: Vec<Snapshot>,
    /// Parameters at the end of the last completed epoch.
    pub last_good: ParamStore<f32>,
    pub history: History,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Invalid(#[from] TensorError),
    #[error("training diverged at epoch {}, batch {}", .0.epoch, .0.batch)]
    Diverged(Box<Diverged>),
}

fn check_task(model: &Model<f32>, targets: &Targets) -> Result<()> {
    match (model.config.task, targets) {
        (Task::Classify { classes }, Targets::Classes { classes: c, .. }) if classes == *c => Ok(()),
        (Task::Severity, Targets::Severity(_)) => Ok(()),
        (task, _) => Err(TensorError::Config(format!("dataset targets do not match task {task:?}"))),
    }
}

/// Target tensor for rows `idx`: one-hot rows or a `[batch, 1]` column.
pub fn target_tensor(targets: &Targets, idx: &[usize]) -> Result<Tensor<f32>> {
    match targets {
        Targets::Classes { labels, classes } => one_hot(&idx.iter().map(|&i| labels[i]).collect::<Vec<_>>(), *classes),
        Targets::Severity(y) => Tensor::from_vec(&[idx.len(), 1], idx.iter().map(|&i| y[i] as f32).collect()),
    }
}

fn loss_var(ctx: &mut Ctx<'_, f32>, scores: crate::Var, target: &Tensor<f32>, kind: LossKind, margin: MarginLossConfig) -> Result<crate::Var> {
    match kind {
        LossKind::Margin => ctx.tape.margin_loss(scores, target, margin),
        LossKind::Logcosh => ctx.tape.logcosh_loss(scores, target),
    }
}

/// One optimisation step on a batch. Returns the batch loss; parameters are
/// left untouched when the loss or any gradient is non-finite.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    model: &mut Model<f32>,
    opt: &mut NadamState<f32>,
    images: &Tensor<f32>,
    target: &Tensor<f32>,
    kind: LossKind,
    margin: MarginLossConfig,
    lr: f64,
    rng: &mut Rng,
) -> Result<f64> {
    let (loss, grads, bn) = {
        let mut ctx = Ctx::new(&model.store, Mode::Train, Some(rng));
        let x = ctx.tape.leaf(images.clone());
        let scores = model.forward(&mut ctx, x)?;
        let loss = loss_var(&mut ctx, scores, target, kind, margin)?;
        let value = f64::from(ctx.tape.value(loss).data()[0]);
        if !value.is_finite() {
            return Err(TensorError::NonFinite(format!("loss {value}")));
        }
        let grads = ctx.tape.backward(loss)?;
        let bn = ctx.take_bn_updates();
        (value, grads, bn)
    };
    let store = &model.store;
    let all: Vec<Tensor<f32>> = store.ids().map(|id| grads.param_or_zeros(id, store)).collect();
    opt.step(&mut model.store, lr, |id| all[id.index()].clone())?;
    apply_bn_updates(&mut model.store, &bn, BN_DECAY);
    Ok(loss)
}

/// Inference-mode scores for every image, row-major `[n, outputs]`.
pub fn predict_scores(model: &Model<f32>, data: &Dataset, batch_size: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(data.len() * model.outputs());
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let y = model.predict(&data.batch(chunk)?)?;
        out.extend(y.data().iter().map(|&v| f64::from(v)));
    }
    Ok(out)
}

// Margin loss is a batch mean, log-cosh a batch sum.
fn batch_sum(loss: f64, kind: LossKind, n: usize) -> f64 {
    match kind {
        LossKind::Margin => loss * n as f64,
        LossKind::Logcosh => loss,
    }
}

/// Per-sample loss and accuracy or R² of `model` on `data` in inference mode.
pub fn measure(model: &Model<f32>, data: &Dataset, cfg: &TrainConfig) -> Result<Measured> {
    let scores = predict_scores(model, data, cfg.batch_size)?;
    let kind = cfg.loss.unwrap_or(LossKind::for_task(model.config.task));
    let all: Vec<usize> = (0..data.len()).collect();
    let target = target_tensor(&data.targets, &all)?;
    let st = Tensor::<f32>::from_f64(target.shape(), &scores)?;
    let loss = match kind {
        LossKind::Margin => f64::from(crate::loss::margin_loss_value(&st, &target, &cfg.margin)?),
        LossKind::Logcosh => f64::from(crate::loss::logcosh_value(&st, &target)?) / data.len() as f64,
    };
    Ok(match &data.targets {
        Targets::Classes { labels, classes } => {
            let r = metrics::classification_report(&scores, *classes, labels)?;
            Measured { loss, accuracy: Some(r.accuracy), r2: None }
        }
        Targets::Severity(y) => Measured { loss, accuracy: None, r2: metrics::r2_score(&scores, y).ok() },
    })
}

/// Full evaluation report of `model` on `data`.
pub fn evaluate(model: &Model<f32>, data: &Dataset, batch_size: usize) -> Result<EvalReport> {
    let scores = predict_scores(model, data, batch_size)?;
    report_from_scores(&scores, &data.targets)
}

pub fn report_from_scores(scores: &[f64], targets: &Targets) -> Result<EvalReport> {
    match targets {
        Targets::Classes { labels, classes } => metrics::classification_report(scores, *classes, labels),
        Targets::Severity(y) => {
            let rale: Vec<u8> = y.iter().map(|&v| crate::severity::round_half_even(1.0 + 7.0 * v).clamp(1.0, 8.0) as u8).collect();
            metrics::severity_report(scores, &rale)
        }
    }
}

/// Runs the full schedule, snapshotting at every cycle boundary and at the
/// final epoch. `on_epoch` sees each epoch's record as it completes.
pub fn train(
    model: &mut Model<f32>,
    data: &Dataset,
    val: Option<&Dataset>,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> core::result::Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(TensorError::EmptyBatch.into());
    }
    check_task(model, &data.targets)?;
    if let Some(v) = val {
        check_task(model, &v.targets)?;
    }
    let kind = cfg.loss.unwrap_or(LossKind::for_task(model.config.task));
    let mut opt = NadamState::new(&model.store, cfg.optimizer)?;
    let mut order_rng = rng::derive(cfg.seed, 1);
    let mut dropout_rng = rng::derive(cfg.seed, 2);
    let mut augment_rng = rng::derive(cfg.seed, 3);
    let mut history = History::default();
    let mut snapshots = Vec::new();
    let cycle_len = cfg.schedule.cycle_len();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 1..=cfg.schedule.epochs {
        let lr = cosine_lr(epoch, &cfg.schedule)?;
        let last_good = model.store.clone();
        rng::shuffle(&mut order_rng, &mut order);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let images = match &cfg.augment {
                Some(a) => {
                    let aug = chunk
                        .iter()
                        .map(|&i| crate::data::augment(&data.images[i], a, &mut augment_rng))
                        .collect::<Result<Vec<_>>>()?;
                    Tensor::stack(&aug)?
                }
                None => data.batch(chunk)?,
            };
            let target = target_tensor(&data.targets, chunk)?;
            match train_step(model, &mut opt, &images, &target, kind, cfg.margin, lr, &mut dropout_rng) {
                Ok(loss) => total += batch_sum(loss, kind, chunk.len()),
                Err(TensorError::NonFinite(_)) => {
                    model.store = last_good.clone();
                    return Err(TrainError::Diverged(Box::new(Diverged { epoch, batch: b + 1, snapshots, last_good, history })));
                }
                Err(e) => return Err(e.into()),
            }
        }
        let val_m = val.map(|v| measure(model, v, cfg)).transpose()?;
        let record = EpochRecord { epoch, lr, loss: total / data.len() as f64, val: val_m };
        on_epoch(&record);
        history.epochs.push(record);
        if cfg.schedule.is_snapshot_epoch(epoch) {
            snapshots.push(Snapshot { epoch, cycle: epoch.div_ceil(cycle_len), params: model.store.clone(), val: val_m });
        }
    }
    Ok(TrainOutcome { snapshots, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{classification_blobs, to_dataset, BlobConfig};
    use crate::model::ModelConfig;

    fn tiny() -> (Model<f32>, Dataset) {
        let samples = classification_blobs(&BlobConfig { samples: 12, ..BlobConfig::default() }).unwrap();
        let data = to_dataset(&samples, 3, 32).unwrap();
        (Model::new(ModelConfig::desk(Task::Classify { classes: 3 }), 5).unwrap(), data)
    }

    #[test]
    fn snapshots_at_cycle_ends() {
        let (mut m, data) = tiny();
        let mut cfg = TrainConfig::new(ScheduleConfig::new(1e-3, 6, 3).unwrap(), 1);
        cfg.batch_size = 6;
        let mut seen = 0;
        let out = train(&mut m, &data, Some(&data), &cfg, &mut |_| seen += 1).unwrap();
        assert_eq!(seen, 6);
        assert_eq!(out.snapshots.iter().map(|s| s.epoch).collect::<Vec<_>>(), [2, 4, 6]);
        assert_eq!(out.snapshots.iter().map(|s| s.cycle).collect::<Vec<_>>(), [1, 2, 3]);
        assert_eq!(out.snapshots[2].params, m.store);
    }

    #[test]
    fn divergence_keeps_last_good_state() {
        let (mut m, mut data) = tiny();
        data.images[3].data_mut()[0] = f32::NAN;
        let cfg = TrainConfig::new(ScheduleConfig::new(1e-3, 2, 1).unwrap(), 1);
        let initial = m.store.clone();
        match train(&mut m, &data, None, &cfg, &mut |_| {}) {
            Err(TrainError::Diverged(d)) => {
                assert_eq!(d.epoch, 1);
                assert_eq!(d.last_good, initial);
                assert!(d.snapshots.is_empty());
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn task_mismatch_is_rejected() {
        let (_, data) = tiny();
        let mut m = Model::<f32>::new(ModelConfig::desk(Task::Severity), 0).unwrap();
        let cfg = TrainConfig::new(ScheduleConfig::new(1e-3, 1, 1).unwrap(), 1);
        assert!(matches!(train(&mut m, &data, None, &cfg, &mut |_| {}), Err(TrainError::Invalid(_))));
    }
}
