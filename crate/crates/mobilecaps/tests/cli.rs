use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mobilecaps::manifest::{load_dataset, write_corpus};
use mobilecaps::store::{load_checkpoint, save_checkpoint};
use mobilecaps_core::data::synthetic::{classification_blobs, severity_blobs, BlobConfig};
use mobilecaps_core::data::Split;
use mobilecaps_core::severity::severity_to_rale;
use mobilecaps_core::{Model, ModelConfig, Task};
use serde_json::{json, Value};
use tempfile::TempDir;

fn corpus(task: &str, samples: usize) -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let blobs = BlobConfig { samples, seed: 1, ..BlobConfig::default() };
    let s = if task == "classify" { classification_blobs(&blobs) } else { severity_blobs(&blobs) }.unwrap();
    write_corpus(dir.path(), &s, |i, _| (i / 3 % 4 == 0).then_some(Split::Test)).unwrap();
    let config = json!({
        "profile": "desk",
        "task": task,
        "seed": 5,
        "batch_size": 8,
        "schedule": { "max_lr": 0.003, "epochs": 2, "cycles": 2 },
        "data": { "manifest": "manifest.csv" },
        "output_dir": "run",
    });
    let path = dir.path().join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    (dir, path)
}

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mobilecaps")).args(args).arg("--quiet").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = cli(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn read(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn empty_manifest_is_an_empty_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("manifest.csv");
    fs::write(&m, "").unwrap();
    let loaded = load_dataset(&m, dir.path()).unwrap();
    assert!(loaded.rows.is_empty() && loaded.diagnostics.is_empty());
}

#[test]
fn bad_rows_become_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("a.pgm");
    fs::write(&img, b"P5\n2 2\n255\n\x00\x80\xff\x40").unwrap();
    fs::write(dir.path().join("bad.pgm"), b"P2\n2 2\n255\n0 0 0 0").unwrap();
    let m = dir.path().join("manifest.csv");
    fs::write(
        &m,
        "path,label,severity,patient_id,split\na.pgm,,3,p1,train\na.pgm,,9,p2,train\nmissing.pgm,1,,p3,\nbad.pgm,0,,p4,test\n",
    )
    .unwrap();
    let loaded = load_dataset(&m, dir.path()).unwrap();
    assert_eq!(loaded.rows.len(), 1);
    let image = &loaded.rows[0].image;
    assert_eq!(image.shape(), &[2, 2, 1]);
    let expect = [0.0, 128.0 / 255.0, 1.0, 64.0 / 255.0];
    assert!(image.data().iter().zip(expect).all(|(a, b)| (f64::from(*a) - b).abs() < 1e-6));
    let lines: Vec<u64> = loaded.diagnostics.iter().map(|d| d.line).collect();
    assert_eq!(lines, vec![3, 4, 5]);
    assert!(loaded.diagnostics[0].message.contains("severity"), "{}", loaded.diagnostics[0]);
}

#[test]
fn train_is_reproducible_byte_for_byte() {
    let (dir, config) = corpus("classify", 24);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["train", "--config", p(&config), "--out", p(&a)]);
    ok(&["train", "--config", p(&config), "--out", p(&b)]);
    assert_eq!(fs::read(a.join("history.json")).unwrap(), fs::read(b.join("history.json")).unwrap());
    assert_eq!(fs::read(a.join("snapshots/snapshot-e0002.mcap")).unwrap(), fs::read(b.join("snapshots/snapshot-e0002.mcap")).unwrap());
    let manifest = read(&a.join("run-train.json"));
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["config_hash"], read(&b.join("run-train.json"))["config_hash"]);
    assert_eq!(manifest["dataset_hash"].as_str().unwrap().len(), 64);
    let index = read(&a.join("snapshots/index.json"));
    assert_eq!(index["snapshots"].as_array().unwrap().len(), 2);
}

#[test]
fn checkpoint_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let model: Model<f32> = Model::new(ModelConfig::desk(Task::Classify { classes: 3 }), 8).unwrap();
    let (a, b) = (dir.path().join("a.mcap"), dir.path().join("b.mcap"));
    save_checkpoint(&model.store, &a).unwrap();
    let mut other: Model<f32> = Model::new(ModelConfig::desk(Task::Classify { classes: 3 }), 9).unwrap();
    load_checkpoint(&mut other.store, &a).unwrap();
    save_checkpoint(&other.store, &b).unwrap();
    assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
}

#[test]
fn evaluate_predict_and_report_after_training() {
    let (dir, config) = corpus("severity", 24);
    let out = dir.path().join("run");
    ok(&["train", "--config", p(&config)]);
    ok(&["evaluate", "--config", p(&config)]);
    let report = read(&out.join("report.json"));
    let names: Vec<&str> = report["reports"].as_array().unwrap().iter().map(|r| r["name"].as_str().unwrap()).collect();
    assert_eq!(names.last(), Some(&"ensemble"));
    assert!(report["reports"][0]["report"]["r2"].is_number());
    ok(&["predict", "--config", p(&config)]);
    let preds = read(&out.join("predictions.json"));
    for pr in preds.as_array().unwrap() {
        let (rale, cat) = severity_to_rale(pr["p"].as_f64().unwrap()).unwrap();
        assert_eq!(pr["rale"], rale);
        assert_eq!(pr["category"], cat.as_str());
    }
    let first = ok(&["report", "--config", p(&config)]);
    assert_eq!(first, ok(&["report", "--config", p(&config)]));
    assert!(first.contains("ensemble"));
}

#[test]
fn kfold_writes_five_folds_and_an_average() {
    let (dir, config) = corpus("classify", 30);
    let out = dir.path().join("kf");
    ok(&["kfold", "--config", p(&config), "--out", p(&out), "--set", "schedule.epochs=1", "--set", "schedule.cycles=1"]);
    let report = read(&out.join("report.json"));
    let names: Vec<&str> = report["reports"].as_array().unwrap().iter().map(|r| r["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["fold1", "fold2", "fold3", "fold4", "fold5", "average"]);
    let acc: Vec<f64> = report["reports"].as_array().unwrap().iter().map(|r| r["report"]["accuracy"].as_f64().unwrap()).collect();
    assert!((acc[..5].iter().sum::<f64>() / 5.0 - acc[5]).abs() < 1e-5);
}

#[test]
fn tune_appends_a_resumable_trace() {
    let (dir, config) = corpus("classify", 15);
    let out = dir.path().join("t");
    let set = ["--set", "schedule.epochs=1", "--set", "schedule.cycles=1", "--set", "tune.budget=3"];
    let args = |extra: &[&'static str]| [&["tune", "--config", p(&config), "--out", p(&out)][..], &set, extra].concat();
    ok(&args(&[]));
    let lines = |d: &Path| fs::read_to_string(d.join("trace.jsonl")).unwrap().lines().count();
    assert_eq!(lines(&out), 3);
    ok(&args(&["--set", "tune.budget=4"]));
    assert_eq!(lines(&out), 4);
    assert!(read(&out.join("best_config.json"))["schedule"]["max_lr"].is_number());
}

#[test]
fn exit_codes_distinguish_failures() {
    let (dir, config) = corpus("classify", 12);
    assert_eq!(cli(&["train", "--config", p(&config), "--set", "schedule.epochs=nope"]).status.code(), Some(2));
    assert_eq!(cli(&["train", "--config", p(&config), "--set", "seed=null"]).status.code(), Some(2));
    assert_eq!(cli(&["train", "--config", p(&dir.path().join("absent.json"))]).status.code(), Some(5));
    fs::write(dir.path().join("manifest.csv"), "wrong,header\n").unwrap();
    assert_eq!(cli(&["train", "--config", p(&config)]).status.code(), Some(3));
    let (_d2, config2) = corpus("classify", 12);
    let diverge = ["train", "--config", p(&config2), "--set", "schedule.max_lr=1e38"];
    assert_eq!(cli(&diverge).status.code(), Some(4));
    assert_eq!(cli(&["report", "--out", p(&dir.path().join("nothing"))]).status.code(), Some(3));
}

#[test]
fn overrides_reach_the_run_manifest() {
    let (dir, config) = corpus("classify", 12);
    let out = dir.path().join("o");
    ok(&["train", "--config", p(&config), "--out", p(&out), "--set", "schedule.epochs=1", "--set", "schedule.cycles=1", "--set", "seed=42"]);
    let m = read(&out.join("run-train.json"));
    assert_eq!(m["seed"], 42);
    assert_eq!(m["config"]["schedule"]["epochs"], 1);
    assert_eq!(read(&out.join("history.json"))["epochs"].as_array().unwrap().len(), 1);
}
