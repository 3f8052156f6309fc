//! Cyclic cosine annealing with warm restarts.

use alloc::format;
use alloc::vec::Vec;

use crate::tensor::{Result, TensorError};

/// `T` epochs split into `C` cycles of `ceil(T / C)` epochs each.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScheduleConfig {
    pub max_lr: f64,
    pub epochs: usize,
    pub cycles: usize,
}

impl ScheduleConfig {
    pub fn new(max_lr: f64, epochs: usize, cycles: usize) -> Result<Self> {
        let cfg = ScheduleConfig { max_lr, epochs, cycles };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cycles < 1 || self.epochs < self.cycles {
            return Err(TensorError::Config(format!("schedule needs epochs >= cycles >= 1, got T={} C={}", self.epochs, self.cycles)));
        }
        if !(self.max_lr > 0.0 && self.max_lr.is_finite()) {
            return Err(TensorError::Config(format!("max learning rate must be positive, got {}", self.max_lr)));
        }
        Ok(())
    }

    pub fn cycle_len(&self) -> usize {
        self.epochs.div_ceil(self.cycles)
    }

    /// True when epoch `t` (1-based) closes a cycle or is the last epoch.
    pub fn is_snapshot_epoch(&self, t: usize) -> bool {
        t.is_multiple_of(self.cycle_len()) || t == self.epochs
    }

    pub fn snapshot_epochs(&self) -> Vec<usize> {
        (1..=self.epochs).filter(|&t| self.is_snapshot_epoch(t)).collect()
    }
}

/// `(a0 / 2) (cos(pi mod(t - 1, L) / L) + 1)` for 1-based epoch `t`.
pub fn cosine_lr(t: usize, cfg: &ScheduleConfig) -> Result<f64> {
    cfg.validate()?;
    if t < 1 || t > cfg.epochs {
        return Err(TensorError::Config(format!("epoch {t} outside 1..={}", cfg.epochs)));
    }
    let len = cfg.cycle_len();
    let phase = ((t - 1) % len) as f64 / len as f64;
    Ok(cfg.max_lr / 2.0 * (libm::cos(core::f64::consts::PI * phase) + 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn restarts_and_midpoint() {
        let cfg = ScheduleConfig::new(0.01, 500, 10).unwrap();
        assert_eq!(cosine_lr(1, &cfg).unwrap(), 0.01);
        assert!((cosine_lr(26, &cfg).unwrap() - 0.005).abs() < 1e-15);
        assert_eq!(cosine_lr(51, &cfg).unwrap(), 0.01);
        assert!(cosine_lr(0, &cfg).is_err());
        assert!(cosine_lr(501, &cfg).is_err());
    }

    #[test]
    fn snapshot_epochs_follow_cycles() {
        let cfg = ScheduleConfig::new(0.01, 500, 10).unwrap();
        assert_eq!(cfg.snapshot_epochs(), (1..=10).map(|c| c * 50).collect::<Vec<_>>());
        let single = ScheduleConfig::new(0.01, 7, 1).unwrap();
        assert_eq!(single.snapshot_epochs(), [7]);
        // ceil(10/3) = 4: boundaries at 4 and 8, then the partial cycle ends at 10.
        let partial = ScheduleConfig::new(0.01, 10, 3).unwrap();
        assert_eq!(partial.snapshot_epochs(), [4, 8, 10]);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ScheduleConfig::new(0.01, 5, 10).is_err());
        assert!(ScheduleConfig::new(0.0, 5, 1).is_err());
        assert!(ScheduleConfig::new(0.01, 5, 0).is_err());
    }
}
