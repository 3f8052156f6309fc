//! The subcommands. Each reads a [`RunConfig`], writes its artifacts under
//! the output directory and returns what it wrote.

use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mobilecaps_core::autodiff::ParamStore;
use mobilecaps_core::data::{balance_classes, kfold_split, materialize, Dataset, Targets};
use mobilecaps_core::ensemble::{ensemble_predict, Combine};
use mobilecaps_core::hypertune::{optimize, Objective, Observation, Outcome};
use mobilecaps_core::metrics::{average_reports, EvalReport};
use mobilecaps_core::model::batch_images;
use mobilecaps_core::schedule::ScheduleConfig;
use mobilecaps_core::severity::severity_to_rale;
use mobilecaps_core::trainer::{report_from_scores, train, EpochRecord, TrainError, TrainOutcome};
use mobilecaps_core::{rng, Model, ModelConfig, Task, Tensor, Variant};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::manifest::{self, LoadedManifest};
use crate::report::{self, NamedReport, ReportDocument};
use crate::store::{self, read_json, write_json, write_text};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Train,
    Tune,
    Kfold,
    Evaluate,
    Predict,
    Ablation,
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Tune => "tune",
            Command::Kfold => "kfold",
            Command::Evaluate => "evaluate",
            Command::Predict => "predict",
            Command::Ablation => "ablation",
            Command::Report => "report",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Where progress lines go.
pub trait Progress {
    fn line(&mut self, text: &str);
}

pub struct Quiet;

impl Progress for Quiet {
    fn line(&mut self, _: &str) {}
}

pub struct Stderr;

impl Progress for Stderr {
    fn line(&mut self, text: &str) {
        eprintln!("{text}");
    }
}

/// Inputs sufficient to reproduce a run, written as `run-<command>.json`.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub dataset_hash: String,
    pub dataset_rows: usize,
    pub skipped_rows: usize,
    pub config: RunConfig,
}

/// A loaded manifest split into the training partition (rows not marked
/// `test`) and the evaluation rows (the `test` rows, or every row when none
/// are marked).
struct Corpus {
    manifest: LoadedManifest,
    train: Vec<usize>,
    eval: Vec<usize>,
}

fn load_corpus(cfg: &RunConfig, out: &Path, command: Command, progress: &mut dyn Progress) -> Result<Corpus> {
    let manifest = manifest::load_dataset(&cfg.data.manifest, &cfg.data.image_root())?;
    for d in &manifest.diagnostics {
        progress.line(&format!("skipped manifest row: {d}"));
    }
    if manifest.rows.is_empty() {
        return Err(Error::Data(format!("{} has no usable rows", cfg.data.manifest.display())));
    }
    let (train, test) = manifest.partition();
    if train.is_empty() && command != Command::Evaluate && command != Command::Predict {
        return Err(Error::Data(format!("{} has no training rows", cfg.data.manifest.display())));
    }
    let eval = if test.is_empty() { (0..manifest.rows.len()).collect() } else { test };
    let run = RunManifest {
        command: command.name().into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        dataset_hash: manifest.hash.clone(),
        dataset_rows: manifest.rows.len(),
        skipped_rows: manifest.diagnostics.len(),
        config: cfg.clone(),
    };
    write_json(&out.join(format!("run-{command}.json")), &run)?;
    Ok(Corpus { manifest, train, eval })
}

fn input_size(model: &ModelConfig) -> usize {
    model.profile.input_size
}

/// Rows `idx` as training data, class-balanced when configured.
fn training_set(cfg: &RunConfig, corpus: &Corpus, idx: &[usize], seed: u64) -> Result<Dataset> {
    let model = cfg.model_config();
    let data = manifest::to_dataset(&corpus.manifest, idx, model.task, input_size(&model))?;
    let (Some(target), Targets::Classes { labels, classes }) = (cfg.data.balance, &data.targets) else {
        return Ok(data);
    };
    let rows = balance_classes(labels, *classes, target, &mut rng::derive(seed, 0xba1))?;
    let aug = cfg.augment.unwrap_or_default();
    let images = materialize(&rows, &data.images, &aug)?;
    let labels = rows.iter().map(|r| r.label).collect();
    Ok(Dataset::new(images, Targets::Classes { labels, classes: *classes })?)
}

/// Trains a fresh model; on divergence the partial history is written to
/// `history_path` before the error is returned.
fn fit(
    model_cfg: &ModelConfig,
    cfg: &RunConfig,
    schedule: ScheduleConfig,
    seed: u64,
    data: &Dataset,
    val: Option<&Dataset>,
    label: &str,
    progress: &mut dyn Progress,
) -> Result<(Model<f32>, std::result::Result<TrainOutcome, TrainError>)> {
    let mut model = Model::<f32>::new(model_cfg.clone(), seed)?;
    let mut tc = cfg.train_config();
    tc.schedule = schedule;
    tc.seed = seed;
    let start = Instant::now();
    let mut log = |r: &EpochRecord| {
        let mut line = format!("[{label}] epoch {}/{} lr {:.6} loss {:.6}", r.epoch, schedule.epochs, r.lr, r.loss);
        if let Some(v) = &r.val {
            line += &format!(" val_loss {:.6}", v.loss);
            if let Some(a) = v.accuracy {
                line += &format!(" val_acc {a:.4}");
            }
            if let Some(r2) = v.r2 {
                line += &format!(" val_r2 {r2:.4}");
            }
        }
        line += &format!(" ({:.1}s)", start.elapsed().as_secs_f64());
        progress.line(&line);
    };
    let outcome = train(&mut model, data, val, &tc, &mut log);
    Ok((model, outcome))
}

fn diverged(e: TrainError) -> Error {
    match e {
        TrainError::Invalid(t) => t.into(),
        TrainError::Diverged(d) => Error::Diverged(format!("non-finite loss or gradient at epoch {}, batch {}", d.epoch, d.batch)),
    }
}

fn history_json(h: &mobilecaps_core::trainer::History) -> String {
    let mut text = serde_json::to_string_pretty(h).expect("history serialises");
    text.push('\n');
    text
}

/// Ensemble scores over `images` in chunks of `batch` rows.
fn ensemble_scores(model: &Model<f32>, stores: &[ParamStore<f32>], images: &[Tensor<f32>], batch: usize, mode: Combine) -> Result<Vec<f64>> {
    let refs: Vec<&ParamStore<f32>> = stores.iter().collect();
    let mut out = Vec::with_capacity(images.len() * model.outputs());
    for chunk in images.chunks(batch.max(1)) {
        let items: Vec<&Tensor<f32>> = chunk.iter().collect();
        let x = batch_images(&items)?;
        out.extend_from_slice(ensemble_predict(model, &refs, &x, mode)?.data());
    }
    Ok(out)
}

fn ensemble_report(model: &Model<f32>, stores: &[ParamStore<f32>], data: &Dataset, batch: usize, mode: Combine) -> Result<EvalReport> {
    let scores = ensemble_scores(model, stores, &data.images, batch, mode)?;
    Ok(report_from_scores(&scores, &data.targets)?)
}

fn write_report(out: &Path, doc: &ReportDocument) -> Result<PathBuf> {
    let path = out.join("report.json");
    write_text(&path, &report::document_json(doc))?;
    Ok(path)
}

pub fn train_command(cfg: &RunConfig, out: &Path, progress: &mut dyn Progress) -> Result<Vec<PathBuf>> {
    let corpus = load_corpus(cfg, out, Command::Train, progress)?;
    let model_cfg = cfg.model_config();
    let data = training_set(cfg, &corpus, &corpus.train, cfg.seed)?;
    let has_test = corpus.eval.len() < corpus.manifest.rows.len();
    let val = if has_test { Some(manifest::to_dataset(&corpus.manifest, &corpus.eval, model_cfg.task, input_size(&model_cfg))?) } else { None };
    let (model, result) = fit(&model_cfg, cfg, cfg.schedule, cfg.seed, &data, val.as_ref(), "train", progress)?;
    let history_path = out.join("history.json");
    let snap_dir = out.join("snapshots");
    match result {
        Ok(outcome) => {
            write_text(&history_path, &history_json(&outcome.history))?;
            store::write_snapshots(&snap_dir, &model.config, &outcome.snapshots)?;
            progress.line(&format!("wrote {} snapshots to {}", outcome.snapshots.len(), snap_dir.display()));
            Ok(vec![history_path, snap_dir])
        }
        Err(TrainError::Diverged(d)) => {
            write_text(&history_path, &history_json(&d.history))?;
            store::write_snapshots(&snap_dir, &model.config, &d.snapshots)?;
            store::save_checkpoint(&d.last_good, &out.join("last_good.mcap"))?;
            Err(diverged(TrainError::Diverged(d)))
        }
        Err(e) => Err(diverged(e)),
    }
}

pub fn evaluate_command(cfg: &RunConfig, out: &Path, progress: &mut dyn Progress) -> Result<Vec<PathBuf>> {
    let corpus = load_corpus(cfg, out, Command::Evaluate, progress)?;
    let (model, stores, index) = store::read_snapshots(&out.join("snapshots"))?;
    let data = manifest::to_dataset(&corpus.manifest, &corpus.eval, model.config.task, input_size(&model.config))?;
    let params = Some(model.param_count().total);
    let mut reports = Vec::new();
    for (entry, s) in index.snapshots.iter().zip(&stores) {
        let report = ensemble_report(&model, std::slice::from_ref(s), &data, cfg.batch_size, cfg.ensemble)?;
        reports.push(NamedReport { name: format!("snapshot-e{}", entry.epoch), params, report });
    }
    let report = ensemble_report(&model, &stores, &data, cfg.batch_size, cfg.ensemble)?;
    reports.push(NamedReport { name: "ensemble".into(), params, report });
    let doc = ReportDocument { kind: "evaluate".into(), reports };
    progress.line(&report::summarize_document(&doc));
    Ok(vec![write_report(out, &doc)?])
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Prediction {
    Classes { path: String, probabilities: Vec<f64>, class: usize },
    Severity { path: String, p: f64, rale: u8, category: String },
}

pub fn predict_command(cfg: &RunConfig, out: &Path, progress: &mut dyn Progress) -> Result<Vec<PathBuf>> {
    let corpus = load_corpus(cfg, out, Command::Predict, progress)?;
    let (model, stores, _) = store::read_snapshots(&out.join("snapshots"))?;
    let images = manifest::images(&corpus.manifest, &corpus.eval, input_size(&model.config))?;
    let scores = ensemble_scores(&model, &stores, &images, cfg.batch_size, cfg.ensemble)?;
    let k = model.outputs();
    let mut preds = Vec::with_capacity(images.len());
    for (&i, row) in corpus.eval.iter().zip(scores.chunks(k)) {
        let path = corpus.manifest.rows[i].record.image_path.clone();
        let pred = match model.config.task {
            Task::Classify { .. } => {
                let class = (0..k).fold(0, |b, j| if row[j] > row[b] { j } else { b });
                Prediction::Classes { path, probabilities: row.to_vec(), class }
            }
            Task::Severity => {
                let (rale, category) = severity_to_rale(row[0].clamp(0.0, 1.0))?;
                Prediction::Severity { path, p: row[0], rale, category: category.as_str().into() }
            }
        };
        preds.push(pred);
    }
    let path = out.join("predictions.json");
    write_json(&path, &preds)?;
    progress.line(&format!("wrote {} predictions to {}", preds.len(), path.display()));
    Ok(vec![path])
}

pub fn kfold_command(cfg: &RunConfig, out: &Path, progress: &mut dyn Progress) -> Result<Vec<PathBuf>> {
    let corpus = load_corpus(cfg, out, Command::Kfold, progress)?;
    let model_cfg = cfg.model_config();
    let patients = corpus.manifest.patients(&corpus.train);
    let folds = kfold_split(&patients, cfg.kfold.k, cfg.seed)?;
    let mut reports = Vec::with_capacity(folds.len() + 1);
    let mut written = Vec::new();
    for (f, fold) in folds.iter().enumerate() {
        let label = format!("fold{}", f + 1);
        let seed = cfg.seed.wrapping_add(f as u64 + 1);
        let train_idx: Vec<usize> = fold.train.iter().map(|&i| corpus.train[i]).collect();
        let val_idx: Vec<usize> = fold.val.iter().map(|&i| corpus.train[i]).collect();
        let data = training_set(cfg, &corpus, &train_idx, seed)?;
        let val = manifest::to_dataset(&corpus.manifest, &val_idx, model_cfg.task, input_size(&model_cfg))?;
        let (model, result) = fit(&model_cfg, cfg, cfg.schedule, seed, &data, Some(&val), &label, progress)?;
        let outcome = result.map_err(diverged)?;
        let history = out.join("folds").join(&label).join("history.json");
        write_text(&history, &history_json(&outcome.history))?;
        written.push(history);
        let stores: Vec<ParamStore<f32>> = outcome.snapshots.into_iter().map(|s| s.params).collect();
        let report = ensemble_report(&model, &stores, &val, cfg.batch_size, cfg.ensemble)?;
        reports.push(NamedReport { name: label, params: Some(model.param_count().total), report });
    }
    let fold_reports: Vec<EvalReport> = reports.iter().map(|r| r.report.clone()).collect();
    let average = average_reports(&fold_reports)?;
    reports.push(NamedReport { name: "average".into(), params: reports[0].params, report: average });
    let doc = ReportDocument { kind: "kfold".into(), reports };
    progress.line(&report::summarize_document(&doc));
    written.insert(0, write_report(out, &doc)?);
    Ok(written)
}

pub fn ablation_command(cfg: &RunConfig, out: &Path, progress: &mut dyn Progress) -> Result<Vec<PathBuf>> {
    let corpus = load_corpus(cfg, out, Command::Ablation, progress)?;
    let data = training_set(cfg, &corpus, &corpus.train, cfg.seed)?;
    let mut reports = Vec::new();
    let mut written = Vec::new();
    for variant in Variant::ALL {
        let model_cfg = cfg.model_config().with_variant(variant);
        let eval = manifest::to_dataset(&corpus.manifest, &corpus.eval, model_cfg.task, input_size(&model_cfg))?;
        let (model, result) = fit(&model_cfg, cfg, cfg.schedule, cfg.seed, &data, Some(&eval), variant.name(), progress)?;
        let outcome = result.map_err(diverged)?;
        let history = out.join("ablation").join(variant.name()).join("history.json");
        write_text(&history, &history_json(&outcome.history))?;
        written.push(history);
        let stores: Vec<ParamStore<f32>> = outcome.snapshots.into_iter().map(|s| s.params).collect();
        let report = ensemble_report(&model, &stores, &eval, cfg.batch_size, cfg.ensemble)?;
        reports.push(NamedReport { name: variant.name().into(), params: Some(model.param_count().total), report });
    }
    let doc = ReportDocument { kind: "ablation".into(), reports };
    progress.line(&report::summarize_document(&doc));
    written.insert(0, write_report(out, &doc)?);
    Ok(written)
}

/// Reads an existing `trace.jsonl`, one observation per line.
pub fn read_trace(path: &Path) -> Result<Vec<Observation>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Data(format!("{} line {}: {e}", path.display(), i + 1))))
        .collect()
}

/// Records each evaluation's wall time.
struct Timed<F>(F);

impl<F: FnMut(&[f64], u64) -> std::result::Result<f64, String>> Objective for Timed<F> {
    fn evaluate(&mut self, params: &[f64], seed: u64) -> std::result::Result<Outcome, String> {
        let start = Instant::now();
        (self.0)(params, seed).map(|value| Outcome { value, wall_time: start.elapsed().as_secs_f64() })
    }
}

/// Cycle count giving cycles of about `cycle_len` epochs.
pub fn cycles_for(epochs: usize, cycle_len: f64) -> usize {
    let len = cycle_len.round().max(1.0) as usize;
    epochs.div_ceil(len).clamp(1, epochs.max(1))
}

pub fn tune_command(cfg: &RunConfig, out: &Path, progress: &mut dyn Progress) -> Result<Vec<PathBuf>> {
    let corpus = load_corpus(cfg, out, Command::Tune, progress)?;
    let model_cfg = cfg.model_config();
    let (train_idx, val_idx) = if corpus.eval.len() < corpus.manifest.rows.len() {
        (corpus.train.clone(), corpus.eval.clone())
    } else {
        let patients = corpus.manifest.patients(&corpus.train);
        let fold = kfold_split(&patients, cfg.kfold.k, cfg.seed)?.swap_remove(0);
        (fold.train.iter().map(|&i| corpus.train[i]).collect(), fold.val.iter().map(|&i| corpus.train[i]).collect())
    };
    let data = training_set(cfg, &corpus, &train_idx, cfg.seed)?;
    let val = manifest::to_dataset(&corpus.manifest, &val_idx, model_cfg.task, input_size(&model_cfg))?;
    let trace_path = out.join("trace.jsonl");
    let prior = read_trace(&trace_path)?;
    if !prior.is_empty() {
        progress.line(&format!("resuming from {} observations in {}", prior.len(), trace_path.display()));
    }
    std::fs::create_dir_all(out).map_err(Error::io(out))?;
    let mut trace_file = std::fs::OpenOptions::new().create(true).append(true).open(&trace_path).map_err(Error::io(&trace_path))?;
    let epochs = cfg.schedule.epochs;
    let mut objective = Timed(|params: &[f64], seed: u64| -> std::result::Result<f64, String> {
        let schedule = ScheduleConfig::new(params[0], epochs, cycles_for(epochs, params[1])).map_err(|e| e.to_string())?;
        let label = format!("lr {:.2e} cycles {}", schedule.max_lr, schedule.cycles);
        let (model, result) = fit(&model_cfg, cfg, schedule, seed, &data, None, &label, &mut Quiet).map_err(|e| e.to_string())?;
        let outcome = result.map_err(|e| e.to_string())?;
        let stores: Vec<ParamStore<f32>> = outcome.snapshots.into_iter().map(|s| s.params).collect();
        let r = ensemble_report(&model, &stores, &val, cfg.batch_size, cfg.ensemble).map_err(|e| e.to_string())?;
        let value = match model_cfg.task {
            Task::Classify { .. } => r.accuracy,
            Task::Severity => r.r2.unwrap_or(f64::NAN),
        };
        Ok(value)
    });
    let mut write_err = None;
    let mut on_obs = |o: &Observation| {
        progress.line(&format!("trial {:?} -> {:.6}{}", o.params, o.value, if o.failed { " (failed)" } else { "" }));
        let line = serde_json::to_string(o).expect("observation serialises");
        if let Err(e) = writeln!(trace_file, "{line}").and_then(|()| trace_file.flush()) {
            write_err.get_or_insert(e);
        }
    };
    let result = optimize(&mut objective, &cfg.tune.space, cfg.tune.budget, cfg.seed, &cfg.tune.search, &prior, &mut on_obs)?;
    if let Some(e) = write_err {
        return Err(Error::Io { path: trace_path, source: e });
    }
    let mut best = cfg.clone();
    best.schedule = ScheduleConfig::new(result.best.params[0], epochs, cycles_for(epochs, result.best.params[1]))?;
    let best_path = out.join("best_config.json");
    write_json(&best_path, &best)?;
    progress.line(&report::summarize_trace(&result.trace));
    Ok(vec![trace_path, best_path])
}

/// Prints whatever `report.json`, `history.json` and `trace.jsonl` exist
/// under `out`. Never trains.
pub fn report_command(out: &Path) -> Result<String> {
    let mut text = String::new();
    let doc_path = out.join("report.json");
    if doc_path.exists() {
        let doc: ReportDocument = read_json(&doc_path)?;
        text += &report::summarize_document(&doc);
    }
    let history_path = out.join("history.json");
    if history_path.exists() {
        text += &report::summarize_history(&read_json(&history_path)?);
    }
    let trace = read_trace(&out.join("trace.jsonl"))?;
    if !trace.is_empty() {
        text += &report::summarize_trace(&trace);
    }
    if text.is_empty() {
        return Err(Error::Data(format!("nothing to report in {}", out.display())));
    }
    Ok(text)
}

/// Runs `command`. `report` needs only an output directory; every other
/// command needs a config.
pub fn run(command: Command, config: Option<&Path>, overrides: &[String], out: Option<&Path>, progress: &mut dyn Progress) -> Result<String> {
    if command == Command::Report && config.is_none() {
        let out = out.ok_or_else(|| Error::Config("report needs --out or --config".into()))?;
        return report_command(out);
    }
    let path = config.ok_or_else(|| Error::Config(format!("{command} needs --config")))?;
    let cfg = RunConfig::load(path, overrides)?;
    let out = cfg.out_dir(out)?;
    let written = match command {
        Command::Train => train_command(&cfg, &out, progress)?,
        Command::Tune => tune_command(&cfg, &out, progress)?,
        Command::Kfold => kfold_command(&cfg, &out, progress)?,
        Command::Evaluate => evaluate_command(&cfg, &out, progress)?,
        Command::Predict => predict_command(&cfg, &out, progress)?,
        Command::Ablation => ablation_command(&cfg, &out, progress)?,
        Command::Report => return report_command(&out),
    };
    Ok(written.iter().map(|p| format!("wrote {}\n", p.display())).collect())
}
