//! Capsule-network toolkit built around the MobileCaps architecture: an
//! inverted-residual convolutional feature extractor whose final feature map
//! is reshaped into primary capsules and routed through capsule layers by
//! agreement.
//!
//! The crate is `no_std` (it needs `alloc`) and carries no IO. Everything
//! that touches files, JSON or the command line lives in the `mobilecaps`
//! companion crate.
//!
//! Module map:
//!
//! - [`tensor`], [`kernels`], [`autodiff`]: dense NHWC tensors and a tape for
//!   reverse-mode differentiation.
//! - [`nn`]: parameters, layers and the forward context.
//! - [`capsnet`]: squash, vote prediction, dynamic routing, capsule heads.
//! - [`backbone`]: inverted residual blocks and network profiles.
//! - [`model`]: the three model variants (hybrid, capsule-only, backbone-only).
//! - [`loss`], [`metrics`], [`severity`]: training losses, evaluation metrics,
//!   RALE mapping.
//! - [`schedule`], [`nadam`], [`trainer`], [`ensemble`], [`checkpoint`]:
//!   training loop and snapshot ensembling.
//! - [`hypertune`]: Gaussian-process Bayesian optimisation.
//! - [`data`]: preprocessing, augmentation, class balancing, grouped k-fold.
//! - [`selfcheck`]: finite-difference checks of every op and of model losses.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod backbone;
pub mod capsnet;
pub mod checkpoint;
pub mod data;
pub mod ensemble;
pub mod hypertune;
pub mod kernels;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nadam;
pub mod nn;
pub mod rng;
pub mod schedule;
pub mod selfcheck;
pub mod severity;
pub mod tensor;
pub mod trainer;

pub use autodiff::{Gradients, Tape, Var};
pub use model::{Model, ModelConfig, Task, Variant};
pub use rng::Rng;
pub use tensor::{DType, Real, Tensor, TensorError};
