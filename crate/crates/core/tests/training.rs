use mobilecaps_core::checkpoint;
use mobilecaps_core::data::synthetic::{classification_blobs, severity_blobs, to_dataset, BlobConfig};
use mobilecaps_core::data::Dataset;
use mobilecaps_core::ensemble::{combine, ensemble_predict, Combine};
use mobilecaps_core::nadam::NadamState;
use mobilecaps_core::rng;
use mobilecaps_core::schedule::ScheduleConfig;
use mobilecaps_core::trainer::{measure, target_tensor, train, train_step, LossKind, TrainConfig, TrainError};
use mobilecaps_core::{Model, ModelConfig, Task, Tensor};

fn blobs(samples: usize) -> Dataset {
    let cfg = BlobConfig { samples, seed: 3, ..BlobConfig::default() };
    to_dataset(&classification_blobs(&cfg).unwrap(), 3, 32).unwrap()
}

fn classifier(seed: u64) -> Model<f32> {
    Model::new(ModelConfig::desk(Task::Classify { classes: 3 }), seed).unwrap()
}

#[test]
fn three_cycles_give_three_snapshots_at_boundaries() {
    let data = blobs(30);
    let mut model = classifier(1);
    let mut cfg = TrainConfig::new(ScheduleConfig::new(3e-3, 6, 3).unwrap(), 4);
    cfg.batch_size = 10;
    let mut seen = vec![];
    let out = train(&mut model, &data, Some(&data), &cfg, &mut |r| seen.push(r.epoch)).unwrap();
    assert_eq!(seen, (1..=6).collect::<Vec<_>>());
    let epochs: Vec<usize> = out.snapshots.iter().map(|s| s.epoch).collect();
    assert_eq!(epochs, vec![2, 4, 6]);
    assert_eq!(out.snapshots.iter().map(|s| s.cycle).collect::<Vec<_>>(), vec![1, 2, 3]);
    assert_eq!(out.snapshots[2].params, model.store);
    assert!(out.snapshots.iter().all(|s| s.val.is_some()));
    assert!((out.history.epochs[2].lr - 3e-3).abs() < 1e-15);
}

#[test]
fn ensemble_is_mean_of_normalised_snapshots_and_order_free() {
    let data = blobs(15);
    let mut model = classifier(2);
    let mut cfg = TrainConfig::new(ScheduleConfig::new(3e-3, 3, 3).unwrap(), 5);
    cfg.batch_size = 5;
    let out = train(&mut model, &data, None, &cfg, &mut |_| {}).unwrap();
    let stores: Vec<_> = out.snapshots.iter().map(|s| &s.params).collect();
    let images = data.batch(&(0..15).collect::<Vec<_>>()).unwrap();
    let ens = ensemble_predict(&model, &stores, &images, Combine::Normalized).unwrap();
    let mut expect = vec![0.0; 45];
    for s in &stores {
        let mut m = model.clone();
        m.store = (*s).clone();
        let y = m.predict(&images).unwrap().cast::<f64>();
        for (row, out) in y.data().chunks(3).zip(expect.chunks_mut(3)) {
            let total: f64 = row.iter().sum();
            for (o, v) in out.iter_mut().zip(row) {
                *o += v / total / 3.0;
            }
        }
    }
    for (a, b) in ens.data().iter().zip(&expect) {
        assert!((a - b).abs() < 1e-9);
    }
    let reversed: Vec<_> = stores.iter().rev().copied().collect();
    let rotated = vec![stores[1], stores[2], stores[0]];
    assert_eq!(ensemble_predict(&model, &reversed, &images, Combine::Normalized).unwrap(), ens);
    assert_eq!(ensemble_predict(&model, &rotated, &images, Combine::Normalized).unwrap(), ens);
}

#[test]
fn severity_ensemble_averages_raw_outputs() {
    let a = Tensor::from_f64(&[2, 1], &[0.2, 0.4]).unwrap();
    let b = Tensor::from_f64(&[2, 1], &[0.6, 0.0]).unwrap();
    let m = combine(&[a, b], Task::Severity, Combine::Normalized).unwrap();
    assert_eq!(m.data(), &[0.4, 0.2]);
}

#[test]
fn repeated_steps_on_one_batch_reduce_the_loss() {
    let data = blobs(12);
    for (task, kind, data) in [
        (Task::Classify { classes: 3 }, LossKind::Margin, data),
        (Task::Severity, LossKind::Logcosh, {
            let cfg = BlobConfig { samples: 12, seed: 3, ..BlobConfig::default() };
            to_dataset(&severity_blobs(&cfg).unwrap(), 3, 32).unwrap()
        }),
    ] {
        let mut model: Model<f32> = Model::new(ModelConfig::desk(task), 6).unwrap();
        let mut opt = NadamState::new(&model.store, Default::default()).unwrap();
        let idx: Vec<usize> = (0..12).collect();
        let (images, target) = (data.batch(&idx).unwrap(), target_tensor(&data.targets, &idx).unwrap());
        let cfg = TrainConfig::new(ScheduleConfig::new(1e-3, 1, 1).unwrap(), 0);
        let before = measure(&model, &data, &cfg).unwrap().loss;
        let mut rng = rng::seeded(0);
        for _ in 0..10 {
            train_step(&mut model, &mut opt, &images, &target, kind, Default::default(), 1e-3, &mut rng).unwrap();
        }
        let after = measure(&model, &data, &cfg).unwrap().loss;
        assert!(after < before, "{task:?}: {before} -> {after}");
    }
}

#[test]
fn training_is_deterministic() {
    let data = blobs(20);
    let cfg = TrainConfig { batch_size: 8, ..TrainConfig::new(ScheduleConfig::new(3e-3, 2, 1).unwrap(), 11) };
    let run = || {
        let mut m = classifier(3);
        let out = train(&mut m, &data, None, &cfg, &mut |_| {}).unwrap();
        (m.store, out.history)
    };
    assert_eq!(run(), run());
}

#[test]
fn checkpoint_reproduces_predictions_exactly() {
    let data = blobs(9);
    let mut model = classifier(4);
    let cfg = TrainConfig { batch_size: 3, ..TrainConfig::new(ScheduleConfig::new(3e-3, 1, 1).unwrap(), 2) };
    train(&mut model, &data, None, &cfg, &mut |_| {}).unwrap();
    let bytes = checkpoint::encode(&model.store).unwrap();
    let mut fresh = classifier(99);
    checkpoint::load_into(&mut fresh.store, &bytes).unwrap();
    assert_eq!(checkpoint::encode(&fresh.store).unwrap(), bytes);
    let images = data.batch(&(0..9).collect::<Vec<_>>()).unwrap();
    let (a, b) = (model.predict(&images).unwrap(), fresh.predict(&images).unwrap());
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn overflowing_learning_rate_reports_divergence_with_last_good_state() {
    let data = blobs(12);
    let mut model = classifier(5);
    let cfg = TrainConfig { batch_size: 4, ..TrainConfig::new(ScheduleConfig::new(1e38, 4, 1).unwrap(), 1) };
    match train(&mut model, &data, None, &cfg, &mut |_| {}) {
        Err(TrainError::Diverged(d)) => {
            assert!(d.last_good.iter().all(|(_, p)| p.value.all_finite()));
            assert_eq!(model.store, d.last_good);
            assert_eq!(d.history.epochs.len(), d.epoch - 1);
        }
        Ok(out) => panic!("expected divergence, final loss {:?}", out.history.epochs.last()),
        Err(e) => panic!("unexpected error {e}"),
    }
}

#[test]
fn task_mismatch_is_rejected() {
    let data = blobs(6);
    let mut model: Model<f32> = Model::new(ModelConfig::desk(Task::Severity), 0).unwrap();
    let cfg = TrainConfig::new(ScheduleConfig::new(1e-3, 1, 1).unwrap(), 0);
    assert!(train(&mut model, &data, None, &cfg, &mut |_| {}).is_err());
}
