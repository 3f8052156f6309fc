use std::time::Instant;

use mobilecaps_core::autodiff::GradCheckOptions;
use mobilecaps_core::selfcheck::{check_model_loss, check_ops};
use mobilecaps_core::trainer::LossKind;
use mobilecaps_core::{ModelConfig, Task, Variant};

#[test]
fn every_op_matches_central_differences() {
    let opts = GradCheckOptions::default();
    for seed in 0..5 {
        for c in check_ops(seed, &opts).unwrap() {
            assert!(c.report.passed(), "seed {seed} {} input {}: {:?}", c.op, c.input, c.report);
            assert!(c.report.checked > 0, "{} input {} had every coordinate excluded", c.op, c.input);
        }
    }
}

#[test]
fn relu6_kinks_are_the_only_exclusions() {
    let opts = GradCheckOptions::default();
    let checks = check_ops(3, &opts).unwrap();
    for c in &checks {
        if c.op != "relu6" {
            assert_eq!(c.report.excluded, 0, "{}: {:?}", c.op, c.report);
        }
    }
}

fn model_check(config: ModelConfig, kind: LossKind, seed: u64) {
    let start = Instant::now();
    let reports = check_model_loss(&config, kind, seed, 2, 2, &GradCheckOptions::default()).unwrap();
    assert!(!reports.is_empty());
    for (name, r) in &reports {
        assert!(r.passed(), "seed {seed} {name}: {r:?}");
    }
    eprintln!("{:?} {kind:?} seed {seed}: {} tensors in {:?}", config.variant, reports.len(), start.elapsed());
}

#[test]
fn desk_margin_loss_gradient() {
    model_check(ModelConfig::desk(Task::Classify { classes: 3 }), LossKind::Margin, 1);
}

#[test]
fn desk_logcosh_loss_gradient() {
    model_check(ModelConfig::desk(Task::Severity), LossKind::Logcosh, 2);
}

#[test]
fn ablation_variants_gradients() {
    for v in [Variant::CapsnetOnly, Variant::BackboneOnly] {
        model_check(ModelConfig::desk(Task::Classify { classes: 3 }).with_variant(v), LossKind::Margin, 3);
    }
}
