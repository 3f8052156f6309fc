//! Classification and regression metrics.
//!
//! Rates with a zero denominator are reported as 0 and flagged rather than
//! returned as NaN.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::severity::{severity_to_rale, Category};
use crate::tensor::{Result, TensorError};

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    /// Set when the class was never predicted (precision has no denominator).
    pub precision_undefined: bool,
    /// Set when the class never occurs in the truth.
    pub recall_undefined: bool,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalReport {
    pub samples: usize,
    /// Rows are true classes, columns predictions.
    pub confusion: Vec<Vec<usize>>,
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// One-vs-rest AUC per class, absent when the class has no positives or
    /// no negatives.
    pub auc: Vec<Option<f64>>,
    pub r2: Option<f64>,
}

fn ratio(num: usize, den: usize) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

/// Confusion matrix with per-class and macro precision, recall and F1.
pub fn confusion_and_prf(preds: &[usize], truth: &[usize], classes: usize) -> Result<EvalReport> {
    if preds.len() != truth.len() {
        return Err(TensorError::Config(format!("{} predictions for {} labels", preds.len(), truth.len())));
    }
    if let Some(&bad) = preds.iter().chain(truth).find(|&&l| l >= classes) {
        return Err(TensorError::Config(format!("label {bad} outside 0..{classes}")));
    }
    let mut confusion = vec![vec![0usize; classes]; classes];
    for (&p, &t) in preds.iter().zip(truth) {
        confusion[t][p] += 1;
    }
    let per_class: Vec<ClassMetrics> = (0..classes)
        .map(|k| {
            let tp = confusion[k][k];
            let predicted: usize = (0..classes).map(|t| confusion[t][k]).sum();
            let support: usize = confusion[k].iter().sum();
            let (precision, precision_undefined) = ratio(tp, predicted);
            let (recall, recall_undefined) = ratio(tp, support);
            let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
            ClassMetrics { precision, recall, f1, support, precision_undefined, recall_undefined }
        })
        .collect();
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / classes.max(1) as f64;
    let correct: usize = (0..classes).map(|k| confusion[k][k]).sum();
    Ok(EvalReport {
        samples: preds.len(),
        accuracy: ratio(correct, preds.len()).0,
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        confusion,
        per_class,
        auc: vec![None; classes],
        r2: None,
    })
}

/// Ranks from 1, ties sharing the mean of the ranks they span.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Area under the ROC curve of `scores` for the positives marked in `positive`.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let ranks = midranks(scores);
    let rank_sum: f64 = ranks.iter().zip(positive).filter(|(_, &p)| p).map(|(r, _)| r).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

/// One-vs-rest AUC per class from row-major `[n, classes]` scores.
pub fn roc_auc_ovr(scores: &[f64], classes: usize, truth: &[usize]) -> Result<Vec<Option<f64>>> {
    if classes == 0 || scores.len() != truth.len() * classes {
        return Err(TensorError::Config(format!("{} scores for {} samples of {classes} classes", scores.len(), truth.len())));
    }
    Ok((0..classes)
        .map(|k| {
            let col: Vec<f64> = scores.chunks(classes).map(|row| row[k]).collect();
            let pos: Vec<bool> = truth.iter().map(|&t| t == k).collect();
            binary_auc(&col, &pos)
        })
        .collect())
}

/// Coefficient of determination `1 - SS_res / SS_tot`.
pub fn r2_score(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() || truth.len() < 2 {
        return Err(TensorError::Config(format!("r2 needs >= 2 paired values, got {} and {}", pred.len(), truth.len())));
    }
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|y| (y - mean) * (y - mean)).sum();
    if ss_tot == 0.0 {
        return Err(TensorError::Config("r2 is undefined for constant truth".into()));
    }
    let ss_res: f64 = pred.iter().zip(truth).map(|(p, y)| (y - p) * (y - p)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Report for class scores `[n, classes]`: argmax predictions plus AUC.
pub fn classification_report(scores: &[f64], classes: usize, truth: &[usize]) -> Result<EvalReport> {
    let auc = roc_auc_ovr(scores, classes, truth)?;
    let preds: Vec<usize> = scores.chunks(classes).map(argmax).collect();
    let mut report = confusion_and_prf(&preds, truth, classes)?;
    report.auc = auc;
    Ok(report)
}

/// Report for severity probabilities against RALE scores: R² on the
/// normalised targets and a confusion matrix over mild/moderate/severe.
pub fn severity_report(probs: &[f64], rale: &[u8]) -> Result<EvalReport> {
    let y: Vec<f64> = rale.iter().map(|&r| f64::from(r.saturating_sub(1)) / 7.0).collect();
    let cat = |c: Category| c as usize;
    let preds = probs
        .iter()
        .map(|&p| severity_to_rale(p.clamp(0.0, 1.0)).map(|(_, c)| cat(c)))
        .collect::<Result<Vec<_>>>()?;
    let truth = rale.iter().map(|&r| Category::of_score(r).map(cat)).collect::<Result<Vec<_>>>()?;
    let mut report = confusion_and_prf(&preds, &truth, 3)?;
    report.r2 = r2_score(probs, &y).ok();
    Ok(report)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Unweighted mean of every rate over folds; confusion matrices and sample
/// counts are summed. AUC and R² average over the folds that define them.
pub fn average_reports(reports: &[EvalReport]) -> Result<EvalReport> {
    let first = reports.first().ok_or_else(|| TensorError::Config("no reports to average".into()))?;
    let k = first.per_class.len();
    if reports.iter().any(|r| r.per_class.len() != k) {
        return Err(TensorError::Config("reports disagree on class count".into()));
    }
    let n = reports.len() as f64;
    let avg = |f: &dyn Fn(&EvalReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let avg_opt = |f: &dyn Fn(&EvalReport) -> Option<f64>| {
        let vals: Vec<f64> = reports.iter().filter_map(f).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    let mut confusion = vec![vec![0; k]; k];
    for r in reports {
        for (row, src) in confusion.iter_mut().zip(&r.confusion) {
            for (c, s) in row.iter_mut().zip(src) {
                *c += s;
            }
        }
    }
    let per_class = (0..k)
        .map(|c| ClassMetrics {
            precision: avg(&|r| r.per_class[c].precision),
            recall: avg(&|r| r.per_class[c].recall),
            f1: avg(&|r| r.per_class[c].f1),
            support: reports.iter().map(|r| r.per_class[c].support).sum(),
            precision_undefined: reports.iter().any(|r| r.per_class[c].precision_undefined),
            recall_undefined: reports.iter().any(|r| r.per_class[c].recall_undefined),
        })
        .collect();
    Ok(EvalReport {
        samples: reports.iter().map(|r| r.samples).sum(),
        confusion,
        per_class,
        accuracy: avg(&|r| r.accuracy),
        macro_precision: avg(&|r| r.macro_precision),
        macro_recall: avg(&|r| r.macro_recall),
        macro_f1: avg(&|r| r.macro_f1),
        auc: (0..k).map(|c| avg_opt(&|r| r.auc.get(c).copied().flatten())).collect(),
        r2: avg_opt(&|r| r.r2),
    })
}
