//! Writes a synthetic blob corpus (PGM images plus `manifest.csv`) and a
//! desk-profile `config.json` next to it.
//!
//! ```text
//! cargo run --example make_synthetic -- --dir /tmp/blobs --task classify
//! cargo run --release -- train --config /tmp/blobs/config.json
//! ```

use std::path::PathBuf;

use clap::Parser;
use mobilecaps::manifest::write_corpus;
use mobilecaps_core::data::synthetic::{classification_blobs, severity_blobs, BlobConfig};
use mobilecaps_core::data::Split;

#[derive(Parser)]
struct Args {
    #[arg(long)]
    dir: PathBuf,
    /// `classify` or `severity`.
    #[arg(long, default_value = "classify")]
    task: String,
    #[arg(long, default_value_t = 300)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Every n-th patient goes to the test split; 0 keeps everything in training.
    #[arg(long, default_value_t = 5)]
    test_every: usize,
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args = Args::parse();
    let blobs = BlobConfig { samples: args.samples, seed: args.seed, ..BlobConfig::default() };
    let samples = match args.task.as_str() {
        "classify" => classification_blobs(&blobs)?,
        "severity" => severity_blobs(&blobs)?,
        other => return Err(format!("unknown task `{other}`").into()),
    };
    let per_patient = blobs.images_per_patient;
    let manifest = write_corpus(&args.dir, &samples, |i, _| {
        let patient = i / per_patient;
        (args.test_every > 0 && patient.is_multiple_of(args.test_every)).then_some(Split::Test)
    })?;
    let config = serde_json::json!({
        "profile": "desk",
        "task": args.task,
        "classes": blobs.classes,
        "seed": args.seed,
        "batch_size": 16,
        "schedule": { "max_lr": 0.005, "epochs": 30, "cycles": 3 },
        "data": { "manifest": "manifest.csv" },
        "output_dir": "run",
    });
    let path = args.dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&config)? + "\n")?;
    println!("wrote {} and {}", manifest.display(), path.display());
    Ok(())
}
