use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use mobilecaps::commands::{self, Command, Progress, Quiet, Stderr};

/// Train, tune and evaluate MobileCaps models.
///
/// Exit codes: 2 config error, 3 data error, 4 training diverged, 5 IO
/// error, 1 anything else.
#[derive(Parser, Debug)]
#[command(version)]
struct Cli {
    command: Command,
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config value by dot path, e.g. `schedule.epochs=30`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Suppress progress output.
    #[arg(long, short)]
    quiet: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut progress: Box<dyn Progress> = if cli.quiet { Box::new(Quiet) } else { Box::new(Stderr) };
    match commands::run(cli.command, cli.config.as_deref(), &cli.overrides, cli.out.as_deref(), progress.as_mut()) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
