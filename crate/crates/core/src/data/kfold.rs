use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::rng;
use crate::tensor::{Result, TensorError};

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Fold {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub val_patients: Vec<String>,
}

/// Patient-grouped k-fold split over record indices.
///
/// Distinct patients are sorted, shuffled with `seed` and dealt round-robin,
/// so the first `patients % k` folds hold one extra patient.
pub fn kfold_split<S: AsRef<str>>(patient_ids: &[S], k: usize, seed: u64) -> Result<Vec<Fold>> {
    let distinct: BTreeSet<&str> = patient_ids.iter().map(AsRef::as_ref).collect();
    if k < 2 || distinct.len() < k {
        return Err(TensorError::Config(format!("{k}-fold split needs k >= 2 and at least k patients, found {}", distinct.len())));
    }
    let mut patients: Vec<&str> = distinct.into_iter().collect();
    rng::shuffle(&mut rng::seeded(seed), &mut patients);
    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let mine: BTreeSet<&str> = patients.iter().skip(f).step_by(k).copied().collect();
        let (val, train): (Vec<usize>, Vec<usize>) = (0..patient_ids.len()).partition(|&i| mine.contains(patient_ids[i].as_ref()));
        let val_patients = patients.iter().skip(f).step_by(k).map(|p| String::from(*p)).collect();
        folds.push(Fold { train, val, val_patients });
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn eleven_patients_five_folds() {
        let ids: Vec<String> = (0..11).map(|p| format!("p{p}")).collect();
        let folds = kfold_split(&ids, 5, 7).unwrap();
        let sizes: Vec<usize> = folds.iter().map(|f| f.val_patients.len()).collect();
        assert_eq!(sizes, vec![3, 2, 2, 2, 2]);
    }

    #[test]
    fn patients_never_straddle() {
        let mut ids: Vec<&str> = vec!["big"; 100];
        ids.extend(["a", "b", "c", "d", "e", "f"]);
        let folds = kfold_split(&ids, 3, 1).unwrap();
        let holding: Vec<usize> = folds.iter().map(|f| f.val.iter().filter(|&&i| ids[i] == "big").count()).collect();
        assert_eq!(holding.iter().filter(|&&n| n == 100).count(), 1);
        assert_eq!(holding.iter().sum::<usize>(), 100);
        let mut all: Vec<usize> = folds.iter().flat_map(|f| f.val.iter().copied()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..ids.len()).collect::<Vec<_>>());
    }

    #[test]
    fn too_few_patients() {
        assert!(kfold_split(&["a", "a", "b"], 3, 0).is_err());
    }
}
