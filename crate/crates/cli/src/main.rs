//! `speedfield` — simulate traffic, build datasets, train and apply speed-field
//! reconstruction models.
//!
//! Every subcommand writes `manifest.json` into `--out-dir`; relative output
//! paths are resolved against `--out-dir` as well.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "speedfield",
    version,
    about = "Freeway speed-field reconstruction from probe trajectories"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Seed for every random draw of the run.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Require bit-reproducible execution (recorded in the manifest).
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Directory for outputs and the run manifest.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the traffic simulator and write trajectories plus a flow–density scatter.
    Simulate(commands::SimulateArgs),
    /// Simulate frames and cut them into a training dataset cache.
    BuildDataset(commands::BuildDatasetArgs),
    /// Train a model on a dataset cache.
    Train(commands::TrainArgs),
    /// Reconstruct a speed field from probe trajectories.
    Reconstruct(commands::ReconstructArgs),
    /// Per-regime RMSE of a model or ensemble on a dataset cache.
    Evaluate(commands::EvaluateArgs),
    /// Print a kernel support mask.
    MaskInfo(commands::MaskInfoArgs),
    /// Compare models (and optionally their ensemble) on one or more test sets.
    Compare(commands::CompareArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
