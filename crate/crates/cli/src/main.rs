//! `gridflow`: dataset generation, exact solves, GNN training and evaluation.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use gridflow::gnn::Arch;

use config::RunConfig;

/// Seed used when `--seed` is not given.
const DEFAULT_SEED: u64 = 0;

#[derive(Parser)]
#[command(name = "gridflow", version, about = "AC power-flow datasets and GNN surrogates")]
struct Cli {
    /// Output root; results go to <out>/{datasets,checkpoints,reports,plots}.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// JSON config with optional `load`, `solver`, `model` and `train` sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Config override such as `train.lr=1e-3`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate scenario datasets with exact power-flow targets.
    Generate {
        /// Built-in case name (ieee14, ieee30, ieee57, ieee118) or case file.
        #[arg(long)]
        case: String,
        #[arg(long, default_value_t = 10)]
        scenarios: usize,
        /// Samples per scenario file.
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
    /// Solve one power flow and write the solution with diagnostics.
    Solve {
        #[arg(long)]
        case: String,
        /// Multiplies every load and generator dispatch.
        #[arg(long, default_value_t = 1.0)]
        load_scale: f64,
    },
    /// Train a surrogate on a generated dataset.
    Train {
        #[arg(long)]
        case: String,
        #[arg(long)]
        arch: Option<Arch>,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Dataset directory; defaults to <out>/datasets/<case>.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on test files.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Glob of test CSVs; defaults to the split written by `train`.
        #[arg(long)]
        test: Option<String>,
    },
    /// Summarise every evaluation under <out>/reports across architectures and cases.
    Report,
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("GRIDFLOW_THREADS") {
        let n: usize = v.parse().with_context(|| format!("GRIDFLOW_THREADS=`{v}` is not a count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    configure_threads()?;
    let mut cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    match cli.command {
        Command::Generate {
            case,
            scenarios,
            samples,
            seed,
        } => {
            cfg.load.seed = seed;
            commands::generate(&case, &cli.out, &cfg, scenarios, samples)?;
        }
        Command::Solve { case, load_scale } => {
            if !commands::solve(&case, &cli.out, &cfg, load_scale)? {
                eprintln!("error: power flow did not converge");
                return Ok(ExitCode::from(2));
            }
        }
        Command::Train { case, arch, seed, data } => {
            cfg.train.seed = seed;
            if let Some(a) = arch {
                cfg.model.arch = a;
            }
            commands::train_cmd(&case, &cli.out, data.as_deref(), &cfg)?;
        }
        Command::Evaluate { checkpoint, test } => commands::evaluate_cmd(&checkpoint, &cli.out, test.as_deref())?,
        Command::Report => commands::report(&cli.out)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
