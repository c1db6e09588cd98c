use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use anyhow::Context;
use clap::{Parser, Subcommand};

use roadwatch::commands::{self, PrepOptions};
use roadwatch::config::RunConfig;
use roadwatch::core::dataset::{SplitRatios, DEFAULT_TARGET, DEFAULT_VARIANTS};
use roadwatch::{engine, Failure};

/// Traffic congestion monitor: replay or listen for detection frames,
/// publish board messages, simulate traffic, score detectors, prepare
/// datasets.
#[derive(Parser)]
#[command(name = "roadwatch", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the monitoring engine on a `file://` replay or a `tcp://` listener.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Generate a synthetic frame stream plus its ground truth.
    Simulate {
        /// Scenario JSON file.
        scenario: PathBuf,
        /// Directory for frames.jsonl and truth.jsonl.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Score one or more prediction files against ground truth.
    Evaluate {
        #[arg(long)]
        gt: PathBuf,
        /// Prediction file; repeat to compare models side by side.
        #[arg(long = "pred", required = true)]
        preds: Vec<PathBuf>,
        /// Also write the full report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Letterbox, augment and split an annotation file.
    Prep {
        input: PathBuf,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TARGET)]
        target_size: u32,
        #[arg(long, default_value_t = DEFAULT_VARIANTS)]
        variants: usize,
        #[arg(long, default_value = "0.8,0.1,0.1", value_parser = commands::parse_ratios)]
        ratios: SplitRatios,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(config_path: &Path) -> Result<(), Failure> {
    let config = RunConfig::from_file(config_path, |k| std::env::var(k).ok())?;
    let loaded = config.load(config_path)?;
    let shutdown = Arc::new(AtomicBool::new(false));
    let flag = shutdown.clone();
    ctrlc::set_handler(move || flag.store(true, Ordering::Relaxed))
        .context("cannot install signal handler")
        .map_err(Failure::Runtime)?;
    let summary = engine::run(loaded, shutdown).map_err(Failure::Runtime)?;
    println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
    Ok(())
}

fn evaluate(gt: &Path, preds: &[PathBuf], json: Option<&Path>) -> Result<(), Failure> {
    let report = commands::evaluate_files(gt, preds).map_err(Failure::Runtime)?;
    print!("{}", commands::render_table(&report.rows));
    if let Some(path) = json {
        let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
        std::fs::write(path, text)
            .with_context(|| format!("cannot write {}", path.display()))
            .map_err(Failure::Runtime)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config } => run(&config),
        Command::Simulate { scenario, out_dir } => commands::simulate(&scenario, &out_dir),
        Command::Evaluate { gt, preds, json } => evaluate(&gt, &preds, json.as_deref()),
        Command::Prep {
            input,
            out_dir,
            target_size,
            variants,
            ratios,
            seed,
        } => {
            let options = PrepOptions {
                target_size,
                variants,
                ratios,
                seed,
            };
            commands::prep(&input, &out_dir, &options).map(|m| {
                println!("train {} / validation {} / test {}", m.train.len(), m.validation.len(), m.test.len());
            })
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error());
            ExitCode::from(failure.exit_code() as u8)
        }
    }
}
