//! Margin loss on capsule lengths and log-cosh regression loss.

use alloc::format;
use alloc::vec::Vec;

use crate::tensor::{Real, Result, Tensor, TensorError};

/// Hinge margins and the down-weight of absent-class terms.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MarginLossConfig {
    pub m_plus: f64,
    pub m_minus: f64,
    pub lambda: f64,
}

impl Default for MarginLossConfig {
    fn default() -> Self {
        MarginLossConfig { m_plus: 0.9, m_minus: 0.1, lambda: 0.5 }
    }
}

impl MarginLossConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 < self.m_minus && self.m_minus < self.m_plus && self.m_plus < 1.0 && self.lambda > 0.0;
        if !ok {
            return Err(TensorError::Config(format!("margin loss needs 0 < m- < m+ < 1 and lambda > 0, got {self:?}")));
        }
        Ok(())
    }
}

fn check_one_hot<T: Real>(lengths: &Tensor<T>, targets: &Tensor<T>) -> Result<usize> {
    lengths.same_shape(targets)?;
    let k = match lengths.shape() {
        [_, k] => *k,
        s => return Err(TensorError::Config(format!("capsule lengths must be [batch, K], got {s:?}"))),
    };
    for (row_idx, row) in targets.data().chunks(k).enumerate() {
        let ones = row.iter().filter(|&&t| t == T::one()).count();
        let zeros = row.iter().filter(|&&t| t == T::zero()).count();
        if ones != 1 || ones + zeros != k {
            return Err(TensorError::NotOneHot(format!("row {row_idx} is {row:?}")));
        }
    }
    Ok(k)
}

/// Batch mean of `sum_k T_k max(0, m+ - |v_k|)^2 + lambda (1 - T_k) max(0, |v_k| - m-)^2`.
pub fn margin_loss_value<T: Real>(lengths: &Tensor<T>, targets: &Tensor<T>, cfg: &MarginLossConfig) -> Result<T> {
    let k = check_one_hot(lengths, targets)?;
    let (mp, mm, lam) = (T::of(cfg.m_plus), T::of(cfg.m_minus), T::of(cfg.lambda));
    let batch = lengths.len() / k;
    let mut total = T::zero();
    for (&l, &t) in lengths.data().iter().zip(targets.data()) {
        let pos = (mp - l).max(T::zero());
        let neg = (l - mm).max(T::zero());
        total += t * pos * pos + lam * (T::one() - t) * neg * neg;
    }
    Ok(total / T::of(batch as f64))
}

pub(crate) fn margin_loss_grad<T: Real>(lengths: &Tensor<T>, targets: &Tensor<T>, cfg: &MarginLossConfig) -> Tensor<T> {
    let k = *lengths.shape().last().unwrap_or(&1);
    let inv_batch = T::of(k as f64 / lengths.len() as f64);
    let (mp, mm, lam) = (T::of(cfg.m_plus), T::of(cfg.m_minus), T::of(cfg.lambda));
    let two = T::of(2.0);
    lengths
        .zip_map(targets, |l, t| {
            let pos = (mp - l).max(T::zero());
            let neg = (l - mm).max(T::zero());
            (-two * t * pos + two * lam * (T::one() - t) * neg) * inv_batch
        })
        .expect("validated in forward")
}

/// `log(cosh(d))` without overflow for large `|d|`.
pub fn logcosh<T: Real>(d: T) -> T {
    let a = d.abs();
    if a < T::one() {
        let s = (a / T::of(2.0)).sinh();
        (T::of(2.0) * s * s).ln_1p()
    } else {
        a + (T::of(-2.0) * a).exp().ln_1p() - T::of(core::f64::consts::LN_2)
    }
}

/// `sum_i log(cosh(pred_i - y_i))`
pub fn logcosh_value<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    if pred.len() != target.len() {
        return Err(TensorError::ShapeMismatch { lhs: pred.shape().to_vec(), rhs: target.shape().to_vec() });
    }
    Ok(pred.data().iter().zip(target.data()).map(|(&p, &y)| logcosh(p - y)).sum())
}

pub(crate) fn logcosh_grad<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Tensor<T> {
    let data: Vec<T> = pred.data().iter().zip(target.data()).map(|(&p, &y)| (p - y).tanh()).collect();
    Tensor::from_vec(pred.shape(), data).expect("shape preserved")
}

/// One-hot rows for integer class labels.
pub fn one_hot<T: Real>(labels: &[usize], classes: usize) -> Result<Tensor<T>> {
    let mut t = Tensor::zeros(&[labels.len().max(1), classes])?;
    if labels.is_empty() {
        return Err(TensorError::Config("no labels".into()));
    }
    for (row, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(TensorError::NotOneHot(format!("label {l} outside 0..{classes}")));
        }
        t.data_mut()[row * classes + l] = T::one();
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn margin_loss_cases() {
        let cfg = MarginLossConfig::default();
        let target = t(&[1, 3], &[1., 0., 0.]);
        let v = margin_loss_value(&t(&[1, 3], &[0.95, 0.05, 0.05]), &target, &cfg).unwrap();
        assert_eq!(v, 0.0);
        let v = margin_loss_value(&t(&[1, 3], &[0.0, 1.0, 1.0]), &target, &cfg).unwrap();
        assert!((v - 1.62).abs() < 1e-12);
        let v = margin_loss_value(&t(&[1, 3], &[0.9, 0.1, 0.1]), &target, &cfg).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn margin_loss_rejects_non_one_hot() {
        let cfg = MarginLossConfig::default();
        let l = t(&[1, 3], &[0.5, 0.5, 0.5]);
        assert!(matches!(margin_loss_value(&l, &t(&[1, 3], &[1., 1., 0.]), &cfg), Err(TensorError::NotOneHot(_))));
        assert!(matches!(margin_loss_value(&l, &t(&[1, 3], &[0.5, 0., 0.]), &cfg), Err(TensorError::NotOneHot(_))));
    }

    #[test]
    fn margin_config_validation() {
        assert!(MarginLossConfig::default().validate().is_ok());
        assert!(MarginLossConfig { m_plus: 0.1, m_minus: 0.9, lambda: 0.5 }.validate().is_err());
    }

    #[test]
    fn logcosh_cases() {
        assert_eq!(logcosh_value(&t(&[2], &[0.3, 0.4]), &t(&[2], &[0.3, 0.4])).unwrap(), 0.0);
        assert!((logcosh(1.0f64) - 0.433_780_830_483_027).abs() < 1e-12);
        let big = logcosh(50.0f64);
        assert!((big - (50.0 - core::f64::consts::LN_2)).abs() < 1e-12);
        assert!(logcosh(1000.0f32).is_finite());
        assert!(logcosh_value(&t(&[2], &[0., 0.]), &t(&[3], &[0., 0., 0.])).is_err());
    }
}
