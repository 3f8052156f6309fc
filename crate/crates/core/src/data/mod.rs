//! Dataset records and the in-memory parts of the input pipeline.
//!
//! Decoding files and parsing manifests happen in the `mobilecaps` crate;
//! everything here works on already-decoded `[h, w, c]` images in `[0, 1]`.

mod augment;
mod balance;
mod kfold;
mod preprocess;
pub mod synthetic;

pub use augment::{augment, AffineParams, AugmentConfig};
pub use balance::{balance_classes, class_counts, materialize, BalancedRow};
pub use kfold::{kfold_split, Fold};
pub use preprocess::{preprocess, resize_bilinear};

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::tensor::{Result, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Split {
    Train,
    Test,
}

/// One manifest row.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ManifestRecord {
    pub image_path: String,
    pub label: Option<usize>,
    /// RALE score 1..=8.
    pub severity: Option<u8>,
    pub patient_id: String,
    pub split: Option<Split>,
}

impl ManifestRecord {
    pub fn validate(&self) -> Result<()> {
        if self.label.is_none() && self.severity.is_none() {
            return Err(TensorError::Config(format!("`{}` has neither label nor severity", self.image_path)));
        }
        if let Some(s) = self.severity {
            if !(1..=8).contains(&s) {
                return Err(TensorError::Config(format!("`{}` severity {s} outside 1..=8", self.image_path)));
            }
        }
        Ok(())
    }
}

/// Training or evaluation targets, one per image.
#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    Classes { labels: Vec<usize>, classes: usize },
    /// Normalised severities `(rale - 1) / 7` in `[0, 1]`.
    Severity(Vec<f64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes { labels, .. } => labels.len(),
            Targets::Severity(y) => y.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Classes { labels, classes } => Targets::Classes { labels: idx.iter().map(|&i| labels[i]).collect(), classes: *classes },
            Targets::Severity(y) => Targets::Severity(idx.iter().map(|&i| y[i]).collect()),
        }
    }
}

/// Preprocessed model inputs with their targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Vec<Tensor<f32>>,
    pub targets: Targets,
}

impl Dataset {
    pub fn new(images: Vec<Tensor<f32>>, targets: Targets) -> Result<Self> {
        if images.len() != targets.len() {
            return Err(TensorError::Config(format!("{} images for {} targets", images.len(), targets.len())));
        }
        if let Some(first) = images.first() {
            if let Some(bad) = images.iter().find(|t| t.shape() != first.shape()) {
                return Err(TensorError::ShapeMismatch { lhs: first.shape().to_vec(), rhs: bad.shape().to_vec() });
            }
        }
        if let Targets::Classes { labels, classes } = &targets {
            if let Some(&l) = labels.iter().find(|&&l| l >= *classes) {
                return Err(TensorError::Config(format!("label {l} outside 0..{classes}")));
            }
        }
        Ok(Dataset { images, targets })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset { images: idx.iter().map(|&i| self.images[i].clone()).collect(), targets: self.targets.select(idx) }
    }

    /// Stacks images `idx` into one `[batch, h, w, c]` tensor.
    pub fn batch(&self, idx: &[usize]) -> Result<Tensor<f32>> {
        let items: Vec<Tensor<f32>> = idx.iter().map(|&i| self.images[i].clone()).collect();
        Tensor::stack(&items)
    }
}
