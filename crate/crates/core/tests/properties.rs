mod support;

use std::collections::BTreeSet;

use mobilecaps_core::capsnet::{capsule_lengths, squash};
use mobilecaps_core::data::{balance_classes, class_counts, kfold_split};
use mobilecaps_core::kernels::softmax;
use mobilecaps_core::loss::logcosh;
use mobilecaps_core::metrics::{binary_auc, confusion_and_prf, r2_score};
use mobilecaps_core::rng;
use mobilecaps_core::schedule::{cosine_lr, ScheduleConfig};
use mobilecaps_core::Tensor;
use proptest::prelude::*;

fn shaped() -> impl Strategy<Value = (Vec<usize>, Vec<f64>)> {
    prop::collection::vec(1usize..5, 1..4).prop_flat_map(|shape| {
        let n: usize = shape.iter().product();
        (Just(shape), prop::collection::vec(-20.0f64..20.0, n))
    })
}

proptest! {
    #[test]
    fn softmax_sums_to_one((shape, data) in shaped(), axis in 0usize..3) {
        let axis = axis % shape.len();
        let y = softmax(&Tensor::<f64>::from_f64(&shape, &data).unwrap(), axis).unwrap();
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        for o in 0..outer {
            for i in 0..inner {
                let s: f64 = (0..shape[axis]).map(|k| y.data()[(o * shape[axis] + k) * inner + i]).sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
            }
        }
        prop_assert!(y.data().iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn reshape_round_trips((shape, data) in shaped()) {
        let t = Tensor::<f64>::from_f64(&shape, &data).unwrap();
        let flat = t.reshape(&[t.len()]).unwrap();
        prop_assert_eq!(flat.reshape(&shape).unwrap(), t);
    }

    #[test]
    fn squash_preserves_direction_and_orders_lengths(v in prop::collection::vec(-5.0f64..5.0, 1..8), k in 1.01f64..10.0) {
        let a = Tensor::<f64>::from_f64(&[1, v.len()], &v).unwrap();
        let b = a.scale(k);
        let (sa, sb) = (squash(&a), squash(&b));
        let la = capsule_lengths(&sa).unwrap().data()[0];
        let lb = capsule_lengths(&sb).unwrap().data()[0];
        prop_assert!(la < 1.0 && lb < 1.0);
        let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            prop_assert!(lb > la);
            for (x, y) in v.iter().zip(sa.data()) {
                prop_assert!(x * y >= 0.0);
            }
        }
    }

    #[test]
    fn logcosh_is_even_and_bounded(d in -60.0f64..60.0) {
        let l = logcosh(d);
        prop_assert!(l >= 0.0);
        prop_assert!(l <= d * d / 2.0 + 1e-12);
        prop_assert!(l >= d.abs() - std::f64::consts::LN_2 - 1e-12);
        prop_assert_eq!(l, logcosh(-d));
        prop_assert!((l - support::logcosh(d)).abs() <= 1e-9 * (1.0 + l));
    }

    #[test]
    fn auc_matches_pair_count(pairs in prop::collection::vec((0u8..6, any::<bool>()), 2..40)) {
        let scores: Vec<f64> = pairs.iter().map(|&(s, _)| f64::from(s) / 5.0).collect();
        let pos: Vec<bool> = pairs.iter().map(|&(_, p)| p).collect();
        let (a, b) = (binary_auc(&scores, &pos), support::pair_auc(&scores, &pos));
        match (a, b) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
            (a, b) => prop_assert_eq!(a, b),
        }
    }

    #[test]
    fn precision_recall_match_counts(rows in prop::collection::vec((0usize..3, 0usize..3), 1..60)) {
        let preds: Vec<usize> = rows.iter().map(|r| r.0).collect();
        let truth: Vec<usize> = rows.iter().map(|r| r.1).collect();
        let rep = confusion_and_prf(&preds, &truth, 3).unwrap();
        for k in 0..3 {
            let tp = rows.iter().filter(|&&(p, t)| p == k && t == k).count() as f64;
            let predicted = preds.iter().filter(|&&p| p == k).count() as f64;
            let actual = truth.iter().filter(|&&t| t == k).count() as f64;
            let m = &rep.per_class[k];
            if predicted > 0.0 {
                prop_assert!((m.precision - tp / predicted).abs() < 1e-12);
            }
            if actual > 0.0 {
                prop_assert!((m.recall - tp / actual).abs() < 1e-12);
            }
            prop_assert_eq!(m.support, actual as usize);
        }
        let correct = rows.iter().filter(|r| r.0 == r.1).count() as f64;
        prop_assert!((rep.accuracy - correct / rows.len() as f64).abs() < 1e-12);
    }

    #[test]
    fn kfold_is_patient_disjoint_and_balanced(patients in 2usize..30, per in 1usize..4, k in 2usize..6, seed in any::<u64>()) {
        prop_assume!(patients >= k);
        let ids: Vec<String> = (0..patients * per).map(|i| format!("p{}", i % patients)).collect();
        let folds = kfold_split(&ids, k, seed).unwrap();
        let mut covered = BTreeSet::new();
        for f in &folds {
            let val: BTreeSet<&str> = f.val.iter().map(|&i| ids[i].as_str()).collect();
            let train: BTreeSet<&str> = f.train.iter().map(|&i| ids[i].as_str()).collect();
            prop_assert!(val.is_disjoint(&train));
            prop_assert_eq!(f.val.len() + f.train.len(), ids.len());
            for &i in &f.val {
                prop_assert!(covered.insert(i));
            }
        }
        prop_assert_eq!(covered.len(), ids.len());
        let sizes: Vec<usize> = folds.iter().map(|f| f.val_patients.len()).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn balance_hits_target_exactly(counts in prop::collection::vec(1usize..60, 2..5), target in 1usize..80, seed in any::<u64>()) {
        let labels: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
        let rows = balance_classes(&labels, counts.len(), target, &mut rng::seeded(seed)).unwrap();
        let got = class_counts(&rows.iter().map(|r| r.label).collect::<Vec<_>>(), counts.len());
        prop_assert!(got.iter().all(|&n| n == target));
        for r in &rows {
            prop_assert_eq!(labels[r.source], r.label);
            prop_assert_eq!(r.synthetic, r.aug_seed.is_some());
        }
        for (c, &n) in counts.iter().enumerate() {
            let synth = rows.iter().filter(|r| r.label == c && r.synthetic).count();
            prop_assert_eq!(synth, target.saturating_sub(n));
        }
    }

    #[test]
    fn cosine_matches_closed_form(a0 in 1e-5f64..1.0, epochs in 1usize..200, cycles in 1usize..20) {
        prop_assume!(cycles <= epochs);
        let cfg = ScheduleConfig::new(a0, epochs, cycles).unwrap();
        for t in 1..=epochs {
            let lr = cosine_lr(t, &cfg).unwrap();
            prop_assert!((lr - support::cosine(a0, t, epochs, cycles)).abs() <= 1e-12);
            prop_assert!(lr > 0.0 && lr <= a0);
        }
    }

    #[test]
    fn r2_of_exact_predictions_is_one(y in prop::collection::vec(-10.0f64..10.0, 2..30)) {
        prop_assume!(y.iter().any(|v| (v - y[0]).abs() > 1e-6));
        prop_assert!((r2_score(&y, &y).unwrap() - 1.0).abs() < 1e-12);
    }
}
