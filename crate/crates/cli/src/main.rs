//! `ckl`: verifiers and experiments for ranking-distillation losses.
//!
//! Exit status: 0 on success, 1 on invalid input or usage, 2 when a
//! verified invariant does not hold.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use ckl_core::LossKind;
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "ckl",
    version,
    about = "Loss laboratory for ranking distillation"
)]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Monte-Carlo check of the CKL lower-bound chain.
    Bounds(BoundsArgs),
    /// CKL term weights of one instance as CSV.
    Weights(WeightsArgs),
    /// Gradient-contribution ratio curves of CKL and BKL as CSV.
    Curves(CurvesArgs),
    /// Train a linear student on synthetic data and log every step.
    Train(TrainArgs),
    /// Train several losses from identical data and initialization.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
struct OutArgs {
    /// Output file (written atomically); stdout when absent.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct HpArgs {
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args)]
struct BoundsArgs {
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    s_max: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args)]
struct WeightsArgs {
    #[command(flatten)]
    hp: HpArgs,
    /// JSON-lines instances; weights use their student scores.
    #[arg(long, value_name = "FILE")]
    instances: Option<PathBuf>,
    /// Query to tabulate from `--instances`; the first one by default.
    #[arg(long, requires = "instances")]
    query: Option<String>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args)]
struct CurvesArgs {
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    beta: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Teacher-corruption rate.
    #[arg(long)]
    corruption: Option<f64>,
    /// Teacher noise standard deviation.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    queries: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainerArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    beta_update_period: Option<usize>,
    /// Warm-up loss; combine with `--warmup-epochs`.
    #[arg(long)]
    warmup_loss: Option<LossKind>,
    #[arg(long)]
    warmup_epochs: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    loss: Option<LossKind>,
    /// Seeds both the dataset and the shuffle.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    hp: HpArgs,
    #[command(flatten)]
    synth: SynthArgs,
    #[command(flatten)]
    trainer: TrainerArgs,
    /// Full run log as JSON.
    #[arg(long, value_name = "FILE")]
    summary: Option<PathBuf>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Comma-separated losses, e.g. `kl,ckl`.
    #[arg(long, value_delimiter = ',')]
    losses: Option<Vec<LossKind>>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Single CKL grid point (replaces the configured grid).
    #[command(flatten)]
    hp: HpArgs,
    #[command(flatten)]
    synth: SynthArgs,
    #[command(flatten)]
    trainer: TrainerArgs,
    /// Full comparison table, including per-seed metrics, as JSON.
    #[arg(long, value_name = "FILE")]
    summary: Option<PathBuf>,
    #[command(flatten)]
    out: OutArgs,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(commands::Outcome::Passed) => ExitCode::SUCCESS,
        Ok(commands::Outcome::Failed(msg)) => {
            eprintln!("verification failed: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
