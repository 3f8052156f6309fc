//! Run configuration: one JSON document plus `key.path=value` overrides.

use std::path::{Path, PathBuf};

use mobilecaps_core::data::AugmentConfig;
use mobilecaps_core::ensemble::Combine;
use mobilecaps_core::hypertune::{SearchConfig, SearchSpace};
use mobilecaps_core::loss::MarginLossConfig;
use mobilecaps_core::nadam::NadamConfig;
use mobilecaps_core::schedule::ScheduleConfig;
use mobilecaps_core::trainer::TrainConfig;
use mobilecaps_core::{ModelConfig, Task, Variant};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Paper,
    Desk,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskName {
    Classify,
    Severity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub manifest: PathBuf,
    /// Directory image paths are relative to; defaults to the manifest's.
    pub image_root: Option<PathBuf>,
    /// Resample every class of the training partition to this many rows.
    pub balance: Option<usize>,
}

impl DataConfig {
    pub fn image_root(&self) -> PathBuf {
        self.image_root
            .clone()
            .unwrap_or_else(|| self.manifest.parent().map(Path::to_path_buf).unwrap_or_default())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KfoldConfig {
    pub k: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneConfig {
    pub budget: usize,
    pub space: SearchSpace,
    pub search: SearchConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    pub task: TaskName,
    pub classes: usize,
    pub variant: Variant,
    pub schedule: ScheduleConfig,
    pub optimizer: NadamConfig,
    pub margin: MarginLossConfig,
    pub batch_size: usize,
    /// Per-epoch augmentation of training images; also used to synthesise
    /// oversampled rows when balancing.
    pub augment: Option<AugmentConfig>,
    pub ensemble: Combine,
    pub data: DataConfig,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub kfold: KfoldConfig,
    pub tune: TuneConfig,
}

fn defaults() -> Value {
    json!({
        "classes": 3,
        "variant": Variant::default(),
        "optimizer": NadamConfig::default(),
        "margin": MarginLossConfig::default(),
        "batch_size": 32,
        "augment": null,
        "ensemble": Combine::default(),
        "output_dir": null,
        "kfold": { "k": 5 },
        "tune": { "budget": 20, "space": SearchSpace::lr_and_cycle(), "search": SearchConfig::default() },
    })
}

/// Recursively overlays `top` on `base`; objects merge, anything else
/// replaces.
fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, t) => *b = t,
    }
}

/// Applies one `a.b.c=value` override. The value is read as JSON when it
/// parses, else as a string. Missing objects along the path are created.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key `{key}` has an empty segment")));
    }
    let mut node = doc;
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
        node = match node {
            Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                map.entry(part.to_string()).or_insert(Value::Null)
            }
            Value::Array(items) => {
                let idx: usize = part.parse().map_err(|_| Error::Config(format!("`{part}` in `{key}` indexes an array")))?;
                let len = items.len();
                let slot = items.get_mut(idx).ok_or_else(|| Error::Config(format!("index {idx} in `{key}` out of range 0..{len}")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(Error::Config(format!("`{key}`: `{part}` is inside a scalar"))),
        };
    }
    unreachable!("loop returns on the last segment")
}

impl RunConfig {
    /// Parses `text` over the defaults, applies overrides and resolves
    /// relative paths against `base`. Does not check that paths exist.
    pub fn parse(text: &str, overrides: &[String], base: &Path) -> Result<Self> {
        let file: Value = serde_json::from_str(text).map_err(Error::config)?;
        if !file.is_object() {
            return Err(Error::Config("config must be a JSON object".into()));
        }
        let mut doc = defaults();
        merge(&mut doc, file);
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let mut cfg: RunConfig = serde_json::from_value(doc).map_err(Error::config)?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.data.manifest);
        if let Some(r) = cfg.data.image_root.as_mut() {
            resolve(r);
        }
        if let Some(o) = cfg.output_dir.as_mut() {
            resolve(o);
        }
        Ok(cfg)
    }

    /// Reads, overrides and validates a config file.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let cfg = Self::parse(&text, overrides, base).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        self.train_config().validate()?;
        if !self.data.manifest.is_file() {
            return Err(Error::Config(format!("manifest {} does not exist", self.data.manifest.display())));
        }
        if let Some(root) = &self.data.image_root {
            if !root.is_dir() {
                return Err(Error::Config(format!("image root {} is not a directory", root.display())));
            }
        }
        if self.data.balance == Some(0) {
            return Err(Error::Config("data.balance must be >= 1".into()));
        }
        if self.data.balance.is_some() && self.task == TaskName::Severity {
            return Err(Error::Config("class balancing applies to classification only".into()));
        }
        if self.kfold.k < 2 {
            return Err(Error::Config(format!("kfold.k must be >= 2, got {}", self.kfold.k)));
        }
        self.tune.space.validate()?;
        if self.tune.space.dims.len() != 2 {
            return Err(Error::Config("tune.space needs exactly two dimensions: learning rate and cycle length".into()));
        }
        if self.tune.budget < self.tune.search.initial_points.max(1) {
            return Err(Error::Config(format!("tune.budget {} is below the initial design", self.tune.budget)));
        }
        Ok(())
    }

    pub fn task(&self) -> Task {
        match self.task {
            TaskName::Classify => Task::Classify { classes: self.classes },
            TaskName::Severity => Task::Severity,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        let base = match self.profile {
            Profile::Paper => ModelConfig::paper(self.task()),
            Profile::Desk => ModelConfig::desk(self.task()),
        };
        base.with_variant(self.variant)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            schedule: self.schedule,
            batch_size: self.batch_size,
            optimizer: self.optimizer,
            margin: self.margin,
            loss: None,
            augment: self.augment,
            seed: self.seed,
        }
    }

    /// The output directory, with `--out` taking precedence.
    pub fn out_dir(&self, out: Option<&Path>) -> Result<PathBuf> {
        out.map(Path::to_path_buf)
            .or_else(|| self.output_dir.clone())
            .ok_or_else(|| Error::Config("no output directory: set output_dir or pass --out".into()))
    }

    /// SHA-256 of the canonical JSON form, after overrides.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(bytes))
    }
}
