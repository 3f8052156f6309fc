//! Averaging the predictions of snapshot models.

use alloc::format;
use alloc::vec::Vec;

use crate::autodiff::ParamStore;
use crate::model::{Model, Task};
use crate::tensor::{Real, Result, Tensor, TensorError};

/// How per-snapshot classifier outputs are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Combine {
    /// Scale each snapshot's capsule lengths to sum to 1 per sample, then
    /// average, giving class probabilities.
    #[default]
    Normalized,
    /// Average the raw lengths.
    Raw,
}

fn normalize_rows(t: &Tensor<f64>) -> Tensor<f64> {
    let k = *t.shape().last().unwrap_or(&1);
    let mut out = t.clone();
    for row in out.data_mut().chunks_mut(k) {
        let s: f64 = row.iter().sum();
        for v in row.iter_mut() {
            *v = if s > 0.0 { *v / s } else { 1.0 / k as f64 };
        }
    }
    out
}

/// Element-wise mean of per-snapshot outputs of equal shape. Contributions
/// are summed in sorted order so the result does not depend on snapshot
/// order.
pub fn combine(outputs: &[Tensor<f64>], task: Task, mode: Combine) -> Result<Tensor<f64>> {
    let first = outputs.first().ok_or_else(|| TensorError::Config("ensemble needs at least one snapshot".into()))?;
    for o in outputs {
        first.same_shape(o)?;
    }
    let prepared: Vec<Tensor<f64>> = match (task, mode) {
        (Task::Classify { .. }, Combine::Normalized) => outputs.iter().map(normalize_rows).collect(),
        _ => outputs.to_vec(),
    };
    let m = prepared.len() as f64;
    let mut col = Vec::with_capacity(prepared.len());
    let data = (0..first.len())
        .map(|i| {
            col.clear();
            col.extend(prepared.iter().map(|t| t.data()[i]));
            col.sort_by(f64::total_cmp);
            col.iter().sum::<f64>() / m
        })
        .collect();
    Tensor::from_vec(first.shape(), data)
}

/// Runs `model`'s architecture with each snapshot's parameters over
/// `images` and combines the outputs.
pub fn ensemble_predict<T: Real>(model: &Model<T>, snapshots: &[&ParamStore<T>], images: &Tensor<T>, mode: Combine) -> Result<Tensor<f64>> {
    let mut worker = model.clone();
    let mut outputs = Vec::with_capacity(snapshots.len());
    for (i, s) in snapshots.iter().enumerate() {
        worker
            .store
            .copy_values_from(s)
            .map_err(|e| TensorError::Config(format!("snapshot {i} does not fit the model: {e}")))?;
        outputs.push(worker.predict(images)?.cast::<f64>());
    }
    combine(&outputs, model.config.task, mode)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[[f64; 3]]) -> Tensor<f64> {
        Tensor::from_f64(&[rows.len(), 3], &rows.concat()).unwrap()
    }

    #[test]
    fn mean_of_two_distributions() {
        let task = Task::Classify { classes: 3 };
        let out = combine(&[t(&[[0.8, 0.1, 0.1]]), t(&[[0.6, 0.3, 0.1]])], task, Combine::Normalized).unwrap();
        for (a, b) in out.data().iter().zip([0.7, 0.2, 0.1]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn normalises_lengths_and_stays_on_simplex() {
        let task = Task::Classify { classes: 3 };
        let a = t(&[[0.9, 0.3, 0.0], [0.0, 0.0, 0.0]]);
        let b = t(&[[0.2, 0.2, 0.6], [0.1, 0.5, 0.4]]);
        let ab = combine(&[a.clone(), b.clone()], task, Combine::Normalized).unwrap();
        let ba = combine(&[b, a], task, Combine::Normalized).unwrap();
        assert_eq!(ab, ba);
        for row in ab.data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn severity_is_a_plain_mean() {
        let a = Tensor::from_f64(&[2, 1], &[0.2, 0.4]).unwrap();
        let b = Tensor::from_f64(&[2, 1], &[0.4, 0.8]).unwrap();
        let m = combine(&[a, b], Task::Severity, Combine::Normalized).unwrap();
        assert!((m.data()[0] - 0.3).abs() < 1e-15 && (m.data()[1] - 0.6).abs() < 1e-15);
        assert!(combine(&[], Task::Severity, Combine::Raw).is_err());
    }
}
