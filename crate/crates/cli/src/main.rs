//! `spmarl`: train, evaluate, sweep and aggregate curriculum experiments.
//!
//! Exit codes: 0 on success, 2 for usage errors and unreadable inputs, 1 for
//! failures during a run. Logging goes to stderr and is controlled by
//! `SPMARL_LOG` (`quiet`, `info` or `debug`).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use spmarl::harness::{
    aggregate, evaluate_checkpoint, find_record_files, load_policy, read_records, save_policy, train,
    write_records, ExperimentConfig,
};

const RECORDS_FILE: &str = "records.csv";
const CHECKPOINT_FILE: &str = "policy.ckpt";
const CONFIG_FILE: &str = "config.json";

#[derive(Parser)]
#[command(name = "spmarl", version, about = "Self-paced curriculum training for cooperative multi-agent tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run and write records.csv, policy.ckpt and config.json.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the config's target context.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
    },
    /// Train one independent run per seed, in parallel, under `<out>/seed_<n>`.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-iteration mean and standard deviation over every CSV under a directory.
    Aggregate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// A failure with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    fn run(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

fn init_logging() {
    let level = match std::env::var("SPMARL_LOG").as_deref() {
        Ok("quiet") => log::LevelFilter::Error,
        Ok("debug") => log::LevelFilter::Debug,
        Ok("info") | Err(_) => log::LevelFilter::Info,
        Ok(other) => {
            eprintln!("warning: unknown SPMARL_LOG value {other:?}, using info");
            log::LevelFilter::Info
        }
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
}

fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
    ExperimentConfig::from_json(&text).map_err(|e| Failure::usage(format!("invalid config {}: {e}", path.display())))
}

/// Trains and only then creates `out`, so a failed run leaves nothing behind.
fn train_into(config: &ExperimentConfig, out: &Path) -> Result<(), Failure> {
    let outcome = train(config).map_err(|e| Failure::run(format!("seed {}: {e}", config.seed)))?;
    let write = || -> spmarl::Result<()> {
        fs::create_dir_all(out)?;
        write_records(&out.join(RECORDS_FILE), &outcome.records, config.context.dim())?;
        save_policy(&out.join(CHECKPOINT_FILE), &outcome.policy)?;
        fs::write(out.join(CONFIG_FILE), config.to_json())?;
        Ok(())
    };
    write().map_err(|e| Failure::run(format!("writing {}: {e}", out.display())))?;
    log::info!("wrote {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train { config, seed, out } => {
            let mut config = load_config(&config)?;
            if let Some(seed) = seed {
                config.seed = seed;
            }
            train_into(&config, &out)
        }
        Command::Eval {
            checkpoint,
            config,
            episodes,
        } => {
            let config = load_config(&config)?;
            let policy = load_policy(&checkpoint)
                .map_err(|e| Failure::usage(format!("cannot load {}: {e}", checkpoint.display())))?;
            let value = evaluate_checkpoint(&config, &policy, episodes).map_err(|e| Failure::run(e.to_string()))?;
            println!("{value}");
            Ok(())
        }
        Command::Sweep { config, seeds, out } => {
            let base = load_config(&config)?;
            let failures: Vec<Failure> = seeds
                .par_iter()
                .filter_map(|&seed| {
                    let config = ExperimentConfig { seed, ..base.clone() };
                    train_into(&config, &out.join(format!("seed_{seed}"))).err()
                })
                .collect();
            match failures.into_iter().next() {
                Some(f) => Err(f),
                None => Ok(()),
            }
        }
        Command::Aggregate { input, out } => {
            let files = find_record_files(&input)
                .map_err(|e| Failure::usage(format!("cannot list {}: {e}", input.display())))?;
            if files.is_empty() {
                return Err(Failure::usage(format!("no CSV files under {}", input.display())));
            }
            let runs = files
                .iter()
                .map(|f| read_records(f).map_err(|e| Failure::usage(format!("{}: {e}", f.display()))))
                .collect::<Result<Vec<_>, _>>()?;
            let table = aggregate(&runs).map_err(|e| Failure::run(e.to_string()))?;
            fs::write(&out, table).map_err(|e| Failure::run(format!("writing {}: {e}", out.display())))?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
