//! CSV manifests of PGM images.
//!
//! Header: `path,label,severity,patient_id,split`. `label` is a class id,
//! `severity` a RALE score 1..=8, `split` one of `train`, `test` or empty.
//! Paths are relative to the image root.

use std::path::{Path, PathBuf};

use mobilecaps_core::data::synthetic::SyntheticSample;
use mobilecaps_core::data::{preprocess, Dataset, ManifestRecord, Split, Targets};
use mobilecaps_core::{Task, Tensor};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::pgm;

pub const HEADER: [&str; 5] = ["path", "label", "severity", "patient_id", "split"];

/// A manifest row that could not be loaded.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    /// 1-based line in the CSV file.
    pub line: u64,
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}: {}", self.line, self.path, self.message)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoadedRow {
    pub line: u64,
    pub record: ManifestRecord,
    /// `[h, w, 1]` in `[0, 1]`.
    pub image: Tensor<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoadedManifest {
    pub rows: Vec<LoadedRow>,
    pub diagnostics: Vec<Diagnostic>,
    /// SHA-256 over the manifest bytes and every loaded image file.
    pub hash: String,
}

impl LoadedManifest {
    /// Indices of rows not marked `test`, then of rows marked `test`.
    pub fn partition(&self) -> (Vec<usize>, Vec<usize>) {
        (0..self.rows.len()).partition(|&i| self.rows[i].record.split != Some(Split::Test))
    }

    pub fn patients(&self, idx: &[usize]) -> Vec<String> {
        idx.iter().map(|&i| self.rows[i].record.patient_id.clone()).collect()
    }
}

fn field(s: &str) -> Option<&str> {
    let s = s.trim();
    (!s.is_empty()).then_some(s)
}

fn parse_record(fields: &csv::StringRecord) -> std::result::Result<ManifestRecord, String> {
    if fields.len() != HEADER.len() {
        return Err(format!("expected {} fields, found {}", HEADER.len(), fields.len()));
    }
    let image_path = field(&fields[0]).ok_or("empty path")?.to_string();
    let label = field(&fields[1]).map(|s| s.parse::<usize>().map_err(|_| format!("label `{s}` is not a class id"))).transpose()?;
    let severity = field(&fields[2])
        .map(|s| s.parse::<u8>().map_err(|_| format!("severity `{s}` outside 1..=8")))
        .transpose()?;
    let patient_id = field(&fields[3]).ok_or("empty patient_id")?.to_string();
    let split = match field(&fields[4]) {
        None => None,
        Some("train") => Some(Split::Train),
        Some("test") => Some(Split::Test),
        Some(other) => return Err(format!("split `{other}` is neither train nor test")),
    };
    let record = ManifestRecord { image_path, label, severity, patient_id, split };
    record.validate().map_err(|e| e.to_string())?;
    Ok(record)
}

/// Reads a manifest and decodes its images. Malformed rows become
/// diagnostics; only a missing manifest or a wrong header is an error.
pub fn load_dataset(manifest: &Path, image_root: &Path) -> Result<LoadedManifest> {
    let bytes = std::fs::read(manifest).map_err(Error::io(manifest))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let mut rows = Vec::new();
    let mut diagnostics = Vec::new();
    if !bytes.iter().all(u8::is_ascii_whitespace) {
        let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(bytes.as_slice());
        let header = reader.headers().map_err(|e| Error::Data(format!("{}: {e}", manifest.display())))?;
        let names: Vec<&str> = header.iter().map(str::trim).collect();
        if names != HEADER {
            return Err(Error::Data(format!("{}: header {names:?}, expected {}", manifest.display(), HEADER.join(","))));
        }
        for result in reader.records() {
            let fields = match result {
                Ok(f) => f,
                Err(e) => {
                    let line = e.position().map_or(0, csv::Position::line);
                    diagnostics.push(Diagnostic { line, path: String::new(), message: e.to_string() });
                    continue;
                }
            };
            let line = fields.position().map_or(0, csv::Position::line);
            let path = fields.get(0).unwrap_or("").trim().to_string();
            let record = match parse_record(&fields) {
                Ok(r) => r,
                Err(message) => {
                    diagnostics.push(Diagnostic { line, path, message });
                    continue;
                }
            };
            let file = image_root.join(&record.image_path);
            let image = std::fs::read(&file)
                .map_err(|e| format!("cannot read {}: {e}", file.display()))
                .and_then(|b| {
                    let img = pgm::decode(&b).map_err(|e| e.to_string())?;
                    hasher.update(&b);
                    Ok(img)
                });
            match image {
                Ok(image) => rows.push(LoadedRow { line, record, image }),
                Err(message) => diagnostics.push(Diagnostic { line, path, message }),
            }
        }
    }
    Ok(LoadedManifest { rows, diagnostics, hash: hex::encode(hasher.finalize()) })
}

/// Preprocessed images for rows `idx`.
pub fn images(m: &LoadedManifest, idx: &[usize], input_size: usize) -> Result<Vec<Tensor<f32>>> {
    idx.iter()
        .map(|&i| {
            let row = &m.rows[i];
            preprocess(&row.image, input_size).map_err(|e| Error::Data(format!("line {} ({}): {e}", row.line, row.record.image_path)))
        })
        .collect()
}

/// Rows `idx` as a dataset for `task`; every row needs the matching target.
pub fn to_dataset(m: &LoadedManifest, idx: &[usize], task: Task, input_size: usize) -> Result<Dataset> {
    let missing = |i: usize, what: &str| Error::Data(format!("line {}: {} has no {what}", m.rows[i].line, m.rows[i].record.image_path));
    let targets = match task {
        Task::Classify { classes } => {
            let labels = idx
                .iter()
                .map(|&i| {
                    let l = m.rows[i].record.label.ok_or_else(|| missing(i, "label"))?;
                    if l >= classes {
                        return Err(Error::Data(format!("line {}: label {l} outside 0..{classes}", m.rows[i].line)));
                    }
                    Ok(l)
                })
                .collect::<Result<Vec<_>>>()?;
            Targets::Classes { labels, classes }
        }
        Task::Severity => Targets::Severity(
            idx.iter()
                .map(|&i| m.rows[i].record.severity.map(|r| f64::from(r - 1) / 7.0).ok_or_else(|| missing(i, "severity")))
                .collect::<Result<Vec<_>>>()?,
        ),
    };
    Ok(Dataset::new(images(m, idx, input_size)?, targets)?)
}

/// Writes samples as `images/NNNNN.pgm` plus `manifest.csv` under `dir`
/// and returns the manifest path.
pub fn write_corpus(dir: &Path, samples: &[SyntheticSample], split: impl Fn(usize, &SyntheticSample) -> Option<Split>) -> Result<PathBuf> {
    let images = dir.join("images");
    std::fs::create_dir_all(&images).map_err(Error::io(&images))?;
    let manifest = dir.join("manifest.csv");
    let mut w = csv::Writer::from_path(&manifest).map_err(|e| Error::Other(format!("{}: {e}", manifest.display())))?;
    let csv_err = |e: csv::Error| Error::Other(format!("{}: {e}", manifest.display()));
    w.write_record(HEADER).map_err(csv_err)?;
    for (i, s) in samples.iter().enumerate() {
        let name = format!("images/{i:05}.pgm");
        let file = dir.join(&name);
        std::fs::write(&file, pgm::encode(&s.image)).map_err(Error::io(&file))?;
        let split = match split(i, s) {
            Some(Split::Train) => "train",
            Some(Split::Test) => "test",
            None => "",
        };
        let label = s.label.map(|l| l.to_string()).unwrap_or_default();
        let severity = s.severity.map(|r| r.to_string()).unwrap_or_default();
        w.write_record([name.as_str(), &label, &severity, &s.patient_id, split]).map_err(csv_err)?;
    }
    w.flush().map_err(Error::io(&manifest))?;
    Ok(manifest)
}
