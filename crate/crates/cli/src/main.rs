use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use osal_core::strategy::StrategyKind;
use osal_core::ErrorKind;

mod commands;

/// Open-set active learning with zero-shot purity scoring.
#[derive(Debug, Parser)]
#[command(name = "osal", version)]
struct Cli {
    /// Only log errors.
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset plus a starter experiment config.
    Synth(SynthArgs),
    /// Build the open-set pool and apply the initial random annotation.
    Pool(ExperimentArgs),
    /// Tune the purity temperature on the initially labeled data.
    TuneTemp(ExperimentArgs),
    /// Dump purity scores for every unlabeled sample.
    Score(ExperimentArgs),
    /// Run one experiment.
    Run(ExperimentArgs),
    /// Run one experiment per seed and aggregate the rounds.
    Sweep(SweepArgs),
    /// Re-aggregate the per-seed outputs under a sweep directory.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    k_id: usize,
    #[arg(long, default_value_t = 4)]
    k_ood: usize,
    #[arg(long, default_value_t = 256)]
    dim: usize,
    #[arg(long, default_value_t = 250)]
    per_class: usize,
    #[arg(long, default_value_t = 50)]
    test_per_class: usize,
    #[arg(long, default_value_t = 6.0)]
    separation: f64,
    #[arg(long, default_value_t = 0.05)]
    noise_sigma: f64,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Override the config's top-level seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's strategy.
    #[arg(long)]
    strategy: Option<StrategyKind>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated seeds, one run each.
    #[arg(long, value_delimiter = ',', required = true)]
    seeds: Vec<u64>,
    #[arg(long)]
    strategy: Option<StrategyKind>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Sweep directory holding seed_<n>/rounds.csv files.
    #[arg(long)]
    out: PathBuf,
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 1,
        ErrorKind::Data => 2,
        ErrorKind::Runtime => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = if cli.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let outcome = match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Pool(a) => commands::pool(&a),
        Command::TuneTemp(a) => commands::tune_temp(&a),
        Command::Score(a) => commands::score(&a),
        Command::Run(a) => commands::run(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Report(a) => commands::report(&a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
