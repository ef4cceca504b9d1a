//! `slsr` command-line front end.

// Negated float comparisons reject NaN arguments.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "slsr", version, about = "Realize switched linear systems from Markov parameters")]
pub struct Cli {
    /// Directory for every file written.
    #[arg(long, global = true, env = "SLSR_OUTPUT_DIR", default_value = ".")]
    pub output_dir: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw or load a model and write it with its Markov parameters.
    Simulate(SimulateArgs),
    /// Realize the LTV quadruples at every index of the window.
    Realize(InputArgs),
    /// Stationary set and discrete-state clustering.
    Cluster(StageArgs),
    /// Switching-sequence detection.
    Detect(StageArgs),
    /// Common-basis alignment of the submodels.
    Align(StageArgs),
    /// Whole pipeline, with metrics when a true model is given.
    Meta(StageArgs),
    /// Randomized-model study over a grid of SNRs.
    Montecarlo(MonteCarloArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelPreset {
    /// The three-state, order-3, two-input two-output example.
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PipelinePreset {
    /// Exact data: absolute ε_Z = 1e-4, ν = 6, radius 1e-5, one point per cluster.
    Paper,
    /// Exact data with ε_Z relative to the Hankel scale.
    Default,
    /// Noisy data: calibrated thresholds and re-clustering.
    Noisy,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub preset: Option<ModelPreset>,
    /// Load submodels (and switching, unless overridden) from a model JSON.
    #[arg(long, conflicts_with = "preset")]
    pub model: Option<PathBuf>,
    #[arg(long, short = 'n', default_value_t = 2)]
    pub order: usize,
    #[arg(long, short = 'm', default_value_t = 1)]
    pub inputs: usize,
    #[arg(long, short = 'p', default_value_t = 1)]
    pub outputs: usize,
    #[arg(long, default_value_t = 3)]
    pub sigma: usize,
    #[arg(long = "steps", short = 'N', default_value_t = 1000)]
    pub n_steps: usize,
    /// Explicit segments `label:length,...`; overrides random switching.
    #[arg(long)]
    pub segments: Option<String>,
    #[arg(long, default_value_t = 25)]
    pub min_dwell: usize,
    #[arg(long, default_value_t = 80)]
    pub max_dwell: usize,
    /// Stored lags (`full` for every ℓ ≤ k); defaults to 4n+1.
    #[arg(long)]
    pub band: Option<String>,
    /// Gaussian noise at this SNR in dB.
    #[arg(long, conflicts_with = "noise_eps")]
    pub snr_db: Option<f64>,
    /// Bounded per-block noise of this Frobenius radius.
    #[arg(long)]
    pub noise_eps: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Markov-parameter file.
    #[arg(long)]
    pub markov: PathBuf,
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Args)]
pub struct StageArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// True model JSON, for metrics and the true switching column.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "paper")]
    pub preset: PipelinePreset,
    /// Absolute stationarity threshold ε_Z.
    #[arg(long, conflicts_with = "epsilon_rel")]
    pub epsilon_z: Option<f64>,
    /// ε_Z relative to the Hankel scale.
    #[arg(long)]
    pub epsilon_rel: Option<f64>,
    #[arg(long)]
    pub nu: Option<usize>,
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long)]
    pub min_points: Option<usize>,
    /// Number of submodels to keep when re-clustering (noisy preset).
    #[arg(long)]
    pub target_sigma: Option<usize>,
    /// Detectors to run, comma separated from `markov,correction,signature`.
    #[arg(long, value_delimiter = ',')]
    pub detectors: Option<Vec<String>>,
    /// Evaluate output prediction on the multi-sine input (needs `--model`).
    #[arg(long, requires = "model")]
    pub multisine: bool,
}

#[derive(Debug, Args)]
pub struct MonteCarloArgs {
    #[arg(long, default_value_t = 50)]
    pub runs: usize,
    #[arg(long, value_delimiter = ',', default_value = "50,40,30,20")]
    pub snr: Vec<f64>,
    #[arg(long, default_value_t = 2)]
    pub order: usize,
    #[arg(long, default_value_t = 3)]
    pub sigma: usize,
    #[arg(long = "steps", default_value_t = 650)]
    pub n_steps: usize,
    #[arg(long, default_value_t = 2024)]
    pub seed: u64,
    #[arg(long)]
    pub sequential: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { commands::EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
