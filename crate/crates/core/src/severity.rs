//! RALE severity scores (1 to 8) and their normalised regression targets.

use core::fmt;

use crate::tensor::{Result, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Category {
    Mild,
    Moderate,
    Severe,
}

impl Category {
    pub fn of_score(score: u8) -> Result<Self> {
        match score {
            1..=2 => Ok(Category::Mild),
            3..=5 => Ok(Category::Moderate),
            6..=8 => Ok(Category::Severe),
            _ => Err(TensorError::Config(alloc::format!("RALE score {score} outside 1..=8"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Mild => "mild",
            Category::Moderate => "moderate",
            Category::Severe => "severe",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A RALE score paired with its target `y = (rale - 1) / 7`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeverityTarget {
    pub rale_score: u8,
    pub y: f64,
}

impl SeverityTarget {
    pub fn new(rale_score: u8) -> Result<Self> {
        Category::of_score(rale_score)?;
        Ok(SeverityTarget { rale_score, y: f64::from(rale_score - 1) / 7.0 })
    }
}

pub fn round_half_even(x: f64) -> f64 {
    let f = libm::floor(x);
    let diff = x - f;
    if diff > 0.5 {
        f + 1.0
    } else if diff < 0.5 || libm::fmod(f, 2.0) == 0.0 {
        f
    } else {
        f + 1.0
    }
}

/// Maps a head output `p` in `[0, 1]` to a RALE score and its category.
pub fn severity_to_rale(p: f64) -> Result<(u8, Category)> {
    if !(0.0..=1.0).contains(&p) {
        return Err(TensorError::Config(alloc::format!("severity probability {p} outside [0, 1]")));
    }
    let score = round_half_even(1.0 + 7.0 * p).clamp(1.0, 8.0) as u8;
    Ok((score, Category::of_score(score)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_ties() {
        assert_eq!(severity_to_rale(0.0).unwrap(), (1, Category::Mild));
        assert_eq!(severity_to_rale(1.0).unwrap(), (8, Category::Severe));
        assert_eq!(severity_to_rale(0.5).unwrap(), (4, Category::Moderate));
        assert!(severity_to_rale(1.01).is_err());
        assert!(severity_to_rale(f64::NAN).is_err());
        assert_eq!(round_half_even(2.5), 2.0);
        assert_eq!(round_half_even(3.5), 4.0);
        assert_eq!(round_half_even(-0.5), 0.0);
    }

    #[test]
    fn round_trip_every_score() {
        for r in 1..=8u8 {
            let t = SeverityTarget::new(r).unwrap();
            assert_eq!(severity_to_rale(t.y).unwrap().0, r);
        }
        assert!(SeverityTarget::new(0).is_err());
        assert!(SeverityTarget::new(9).is_err());
    }
}
