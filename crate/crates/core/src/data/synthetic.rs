//! Gaussian-blob image generators for tests and quick experiments.
//!
//! Classification images put one bright blob at a class-specific position
//! on a noisy background. Severity images put a blob near the centre whose
//! brightness rises with the RALE score.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{preprocess, Dataset, Targets};
use crate::rng::{self, Rng};
use crate::tensor::{Result, Tensor, TensorError};

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BlobConfig {
    pub size: usize,
    pub samples: usize,
    pub classes: usize,
    /// Standard deviation of the background noise.
    pub noise: f64,
    pub images_per_patient: usize,
    pub seed: u64,
}

impl Default for BlobConfig {
    fn default() -> Self {
        BlobConfig { size: 32, samples: 300, classes: 3, noise: 0.05, images_per_patient: 3, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSample {
    /// `[size, size, 1]` in `[0, 1]`.
    pub image: Tensor<f32>,
    pub label: Option<usize>,
    pub severity: Option<u8>,
    pub patient_id: String,
}

fn blob_image(size: usize, cx: f64, cy: f64, sigma: f64, amplitude: f64, noise: f64, rng: &mut Rng) -> Result<Tensor<f32>> {
    let mut data = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let blob = amplitude * libm::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
            let v = 0.1 + blob + noise * rng::normal(rng);
            data.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    Tensor::from_vec(&[size, size, 1], data)
}

fn check(cfg: &BlobConfig) -> Result<()> {
    if cfg.size < 8 || cfg.classes < 1 || cfg.images_per_patient < 1 || !(cfg.noise >= 0.0) {
        return Err(TensorError::Config(format!("invalid blob config {cfg:?}")));
    }
    Ok(())
}

fn patient(cfg: &BlobConfig, i: usize) -> String {
    format!("patient{:04}", i / cfg.images_per_patient)
}

/// `samples` images with labels cycling through the classes. Class `k`
/// centres its blob on a circle at angle `2 pi k / classes`.
pub fn classification_blobs(cfg: &BlobConfig) -> Result<Vec<SyntheticSample>> {
    check(cfg)?;
    let mut rng = rng::derive(cfg.seed, 0xb10b);
    let s = cfg.size as f64;
    (0..cfg.samples)
        .map(|i| {
            let label = i % cfg.classes;
            let angle = core::f64::consts::TAU * label as f64 / cfg.classes as f64 - core::f64::consts::FRAC_PI_2;
            let jitter = 0.03 * s;
            let cx = (s - 1.0) / 2.0 + 0.28 * s * libm::cos(angle) + jitter * rng::normal(&mut rng);
            let cy = (s - 1.0) / 2.0 + 0.28 * s * libm::sin(angle) + jitter * rng::normal(&mut rng);
            let sigma = 0.09 * s * rng::uniform_in(&mut rng, 0.8, 1.2);
            let amplitude = rng::uniform_in(&mut rng, 0.6, 0.9);
            let image = blob_image(cfg.size, cx, cy, sigma, amplitude, cfg.noise, &mut rng)?;
            Ok(SyntheticSample { image, label: Some(label), severity: None, patient_id: patient(cfg, i) })
        })
        .collect()
}

/// `samples` images with RALE scores cycling through 1..=8; blob amplitude
/// is `0.1 + 0.8 (rale - 1) / 7`.
pub fn severity_blobs(cfg: &BlobConfig) -> Result<Vec<SyntheticSample>> {
    check(cfg)?;
    let mut rng = rng::derive(cfg.seed, 0x5e7);
    let s = cfg.size as f64;
    (0..cfg.samples)
        .map(|i| {
            let rale = (i % 8) as u8 + 1;
            let p = f64::from(rale - 1) / 7.0;
            let cx = (s - 1.0) / 2.0 + 0.05 * s * rng::normal(&mut rng);
            let cy = (s - 1.0) / 2.0 + 0.05 * s * rng::normal(&mut rng);
            let sigma = 0.15 * s;
            let image = blob_image(cfg.size, cx, cy, sigma, 0.1 + 0.8 * p, cfg.noise, &mut rng)?;
            Ok(SyntheticSample { image, label: None, severity: Some(rale), patient_id: patient(cfg, i) })
        })
        .collect()
}

/// Preprocesses samples to `input_size` and pairs them with targets:
/// labels when every sample has one, normalised severities otherwise.
pub fn to_dataset(samples: &[SyntheticSample], classes: usize, input_size: usize) -> Result<Dataset> {
    let images = samples.iter().map(|s| preprocess(&s.image, input_size)).collect::<Result<Vec<_>>>()?;
    let targets = if let Some(labels) = samples.iter().map(|s| s.label).collect::<Option<Vec<_>>>() {
        Targets::Classes { labels, classes }
    } else {
        let y = samples.iter().map(|s| s.severity.map(|r| f64::from(r - 1) / 7.0)).collect::<Option<Vec<_>>>();
        Targets::Severity(y.ok_or_else(|| TensorError::Config("samples mix labels and severities".into()))?)
    };
    Dataset::new(images, targets)
}
