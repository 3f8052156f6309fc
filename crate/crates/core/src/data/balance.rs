use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::augment::{augment, AugmentConfig};
use crate::rng::{self, Rng};
use crate::tensor::{Result, Tensor, TensorError};

/// One row of a balanced dataset: an original record, or an augmented copy
/// of one to be generated from `aug_seed`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BalancedRow {
    pub source: usize,
    pub label: usize,
    pub synthetic: bool,
    pub aug_seed: Option<u64>,
}

pub fn class_counts(labels: &[usize], classes: usize) -> Vec<usize> {
    let mut counts = vec![0; classes];
    for &l in labels {
        if l < classes {
            counts[l] += 1;
        }
    }
    counts
}

/// Brings every class to exactly `target` rows. Larger classes are
/// subsampled without replacement; smaller ones keep all their originals and
/// are topped up with augmented copies, cycling through a shuffled order of
/// their members. Rows come out grouped by class, originals first.
pub fn balance_classes(labels: &[usize], classes: usize, target: usize, rng: &mut Rng) -> Result<Vec<BalancedRow>> {
    if target == 0 {
        return Err(TensorError::Config("balance target must be >= 1".into()));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
        return Err(TensorError::Config(format!("label {l} outside 0..{classes}")));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    if let Some(empty) = members.iter().position(Vec::is_empty) {
        return Err(TensorError::Config(format!("class {empty} has no samples to balance")));
    }
    let mut rows = Vec::with_capacity(target * classes);
    for (label, idx) in members.iter().enumerate() {
        let mut order = idx.clone();
        rng::shuffle(rng, &mut order);
        if idx.len() >= target {
            let mut keep = order[..target].to_vec();
            keep.sort_unstable();
            rows.extend(keep.into_iter().map(|source| BalancedRow { source, label, synthetic: false, aug_seed: None }));
        } else {
            rows.extend(idx.iter().map(|&source| BalancedRow { source, label, synthetic: false, aug_seed: None }));
            for n in 0..target - idx.len() {
                let seed = rng::next_u64(rng);
                rows.push(BalancedRow { source: order[n % order.len()], label, synthetic: true, aug_seed: Some(seed) });
            }
        }
    }
    Ok(rows)
}

/// Produces the images for balanced rows, augmenting synthetic ones.
pub fn materialize(rows: &[BalancedRow], images: &[Tensor<f32>], cfg: &AugmentConfig) -> Result<Vec<Tensor<f32>>> {
    rows.iter()
        .map(|r| {
            let img = images.get(r.source).ok_or_else(|| TensorError::Config(format!("row source {} out of range", r.source)))?;
            match r.aug_seed {
                Some(seed) if r.synthetic => augment(img, cfg, &mut rng::seeded(seed)),
                _ => Ok(img.clone()),
            }
        })
        .collect()
}
