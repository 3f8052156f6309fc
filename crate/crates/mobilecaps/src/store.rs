//! Checkpoint files and snapshot directories.
//!
//! A snapshot directory holds one checkpoint per snapshot and an
//! `index.json` naming the files and the model configuration they fit.

use std::path::Path;

use mobilecaps_core::autodiff::ParamStore;
use mobilecaps_core::checkpoint;
use mobilecaps_core::trainer::{Measured, Snapshot};
use mobilecaps_core::{Model, ModelConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const INDEX: &str = "index.json";

pub fn save_checkpoint(store: &ParamStore<f32>, path: &Path) -> Result<()> {
    let bytes = checkpoint::encode(store).map_err(Error::config)?;
    std::fs::write(path, bytes).map_err(Error::io(path))
}

/// Loads parameter values into `store`; the store is unchanged on error.
pub fn load_checkpoint(store: &mut ParamStore<f32>, path: &Path) -> Result<()> {
    let bytes = std::fs::read(path).map_err(Error::io(path))?;
    checkpoint::load_into(store, &bytes).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub epoch: usize,
    pub cycle: usize,
    pub file: String,
    pub val: Option<Measured>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotIndex {
    pub model: ModelConfig,
    pub snapshots: Vec<SnapshotEntry>,
}

pub fn write_snapshots(dir: &Path, model: &ModelConfig, snapshots: &[Snapshot]) -> Result<SnapshotIndex> {
    std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let mut entries = Vec::with_capacity(snapshots.len());
    for s in snapshots {
        let file = format!("snapshot-e{:04}.mcap", s.epoch);
        save_checkpoint(&s.params, &dir.join(&file))?;
        entries.push(SnapshotEntry { epoch: s.epoch, cycle: s.cycle, file, val: s.val });
    }
    let index = SnapshotIndex { model: model.clone(), snapshots: entries };
    write_json(&dir.join(INDEX), &index)?;
    Ok(index)
}

/// The model architecture and the parameters of every indexed snapshot.
pub fn read_snapshots(dir: &Path) -> Result<(Model<f32>, Vec<ParamStore<f32>>, SnapshotIndex)> {
    let index: SnapshotIndex = read_json(&dir.join(INDEX))?;
    if index.snapshots.is_empty() {
        return Err(Error::Data(format!("{} lists no snapshots", dir.join(INDEX).display())));
    }
    let model = Model::<f32>::new(index.model.clone(), 0)?;
    let mut stores = Vec::with_capacity(index.snapshots.len());
    for e in &index.snapshots {
        let mut store = model.store.clone();
        load_checkpoint(&mut store, &dir.join(&e.file))?;
        stores.push(store);
    }
    Ok((model, stores, index))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Other(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(Error::io(parent))?;
    }
    std::fs::write(path, text).map_err(Error::io(path))
}

pub fn read_json<D: serde::de::DeserializeOwned>(path: &Path) -> Result<D> {
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}
