//! `flowcast`: synthesize data, train, evaluate, run ablations and baseline
//! comparisons, export attention scores and sweep hyperparameters.
//!
//! Exit codes: 0 success, 1 runtime or training failure, 2 usage or
//! configuration error.

mod commands;
mod config;
mod manifest;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{CheckpointArgs, RunArgs};
use config::Overrides;

#[derive(Debug, Parser)]
#[command(name = "flowcast", version, about = "Multitask subway/taxi/bus inflow forecasting")]
struct Cli {
    /// Seed for data generation, initialization and shuffling.
    #[arg(long, global = true, env = "FLOWCAST_SEED")]
    seed: Option<u64>,
    /// Show WMAPE as a percentage in printed tables (files keep fractions).
    #[arg(long, global = true)]
    percent: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Inflow CSV (timestamp,subway,taxi,bus).
    #[arg(long)]
    data: PathBuf,
    /// Run configuration (TOML); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FromCheckpoint {
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Run configuration; only the split ratios are used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Expected window length; must match the checkpoint.
    #[arg(long)]
    window: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic weekday inflow CSV.
    Synth {
        /// Generator settings (TOML); defaults to the hub profile.
        #[arg(long)]
        config: Option<PathBuf>,
        /// CSV to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Clean, window, split, normalize and train one model.
    Train(DataArgs),
    /// Score a checkpoint on the test split; writes a metrics JSON.
    Evaluate {
        #[command(flatten)]
        from: FromCheckpoint,
        /// JSON file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the full model and variants A-E under identical settings.
    Ablate {
        #[command(flatten)]
        run: DataArgs,
        /// Seeds per model (seed, seed+1, ...); metrics are averaged.
        #[arg(long, default_value_t = 1)]
        repeats: usize,
    },
    /// Train the seven baselines and the full model on one split.
    Compare {
        #[command(flatten)]
        run: DataArgs,
        #[arg(long, default_value_t = 1)]
        repeats: usize,
    },
    /// Export every score matrix for one test sample as CSV and JSON.
    Attention {
        #[command(flatten)]
        from: FromCheckpoint,
        /// Index into the test split.
        #[arg(long, default_value_t = 0)]
        sample: usize,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Coordinate-descent search over batch, d, heads and L.
    Sweep(DataArgs),
}

fn run_args(a: DataArgs, seed: Option<u64>, percent: bool) -> RunArgs {
    RunArgs {
        data: a.data,
        config: a.config,
        overrides: a.overrides,
        seed,
        out: a.out,
        percent,
    }
}

fn checkpoint_args(f: FromCheckpoint, out: PathBuf, percent: bool) -> CheckpointArgs {
    CheckpointArgs {
        checkpoint: f.checkpoint,
        data: f.data,
        config: f.config,
        window: f.window,
        out,
        percent,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let (seed, percent) = (cli.seed, cli.percent);
    let result = match cli.command {
        Command::Synth { config, out } => commands::synth(config.as_deref(), &out, seed),
        Command::Train(a) => commands::train(&run_args(a, seed, percent)),
        Command::Evaluate { from, out } => commands::evaluate_cmd(&checkpoint_args(from, out, percent)),
        Command::Ablate { run, repeats } => commands::ablate(&run_args(run, seed, percent), repeats),
        Command::Compare { run, repeats } => commands::compare(&run_args(run, seed, percent), repeats),
        Command::Attention { from, sample, out } => {
            commands::attention(&checkpoint_args(from, out, percent), sample)
        }
        Command::Sweep(a) => commands::sweep(&run_args(a, seed, percent)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
