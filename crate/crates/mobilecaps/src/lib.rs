//! File formats, datasets and the command-line driver for
//! [`mobilecaps_core`].
//!
//! - [`pgm`]: binary greyscale images.
//! - [`manifest`]: CSV manifests with per-row diagnostics.
//! - [`config`]: the JSON run configuration and `--set` overrides.
//! - [`store`]: checkpoint files and snapshot directories.
//! - [`report`]: deterministic report JSON and text summaries.
//! - [`commands`]: `train`, `tune`, `kfold`, `evaluate`, `predict`,
//!   `ablation` and `report`.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod pgm;
pub mod report;
pub mod store;

pub use commands::{run, Command};
pub use config::RunConfig;
pub use error::{Error, Result};
