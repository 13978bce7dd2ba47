//! `fdi`: synthesize and evaluate residual generators from the command line.
//!
//! Exit codes: 0 success, 1 infeasible or not detectable, 2 input error,
//! 3 numerical failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fdi_core::ErrorClass;

#[derive(Debug, Parser)]
#[command(
    name = "fdi",
    version,
    about = "Residual generator synthesis for nonlinear DAE plants"
)]
pub struct Cli {
    /// TOML file with defaults for any long flag.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: available cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rank test for fault detectability.
    Check(CheckArgs),
    /// Synthesize a filter.
    Synth(SynthArgs),
    /// Simulate one attack run (or many with --trials) and filter it.
    Run(RunArgs),
    /// Scenario count required by the chance certificate.
    Samples(SamplesArgs),
    /// Simulate fault-free scenarios and store their signature matrices.
    GenScenarios(GenArgs),
    /// Paired Monte-Carlo evaluation of one or more filters.
    Eval(EvalArgs),
    /// Empirical convergence of sampled average payoffs.
    Converge(ConvergeArgs),
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Model file (JSON).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Keep only this fault (0-based) and treat the others as unknowns.
    #[arg(long)]
    pub fault: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct FilterArgs {
    /// Numerator degree d_N.
    #[arg(long = "d-n")]
    pub d_n: Option<usize>,
    /// Denominator root r in a(p) = (p + r)^m.
    #[arg(long)]
    pub root: Option<f64>,
    /// Denominator multiplicity m.
    #[arg(long)]
    pub multiplicity: Option<usize>,
    /// Number of Fourier basis functions (even).
    #[arg(long)]
    pub k: Option<usize>,
    /// Signature horizon in seconds.
    #[arg(long)]
    pub horizon: Option<f64>,
    /// periodic, zero_state or identity.
    #[arg(long)]
    pub gram: Option<String>,
    /// basis or exact.
    #[arg(long)]
    pub signature: Option<String>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub filter: FilterArgs,
    /// feasible, approach1, robust, ap or cp.
    #[arg(long)]
    pub perspective: Option<String>,
    /// Scenario set from gen-scenarios.
    #[arg(long)]
    pub scenarios: Option<PathBuf>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Train cp even if fewer scenarios than certified are supplied.
    #[arg(long)]
    pub allow_insufficient: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SamplesArgs {
    #[arg(long)]
    pub epsilon: f64,
    #[arg(long)]
    pub beta: f64,
    /// Take n_r, n_f and d_F from this model.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long = "n-r")]
    pub n_r: Option<usize>,
    #[arg(long = "n-f")]
    pub n_f: Option<usize>,
    #[arg(long = "d-n")]
    pub d_n: Option<usize>,
    #[arg(long = "d-f")]
    pub d_f: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub filter: FilterArgs,
    /// Draws per excitation pattern.
    #[arg(long)]
    pub draws: Option<usize>,
    /// Excitation pattern as comma-separated channels; repeatable. Default: each channel alone.
    #[arg(long = "pattern")]
    pub patterns: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Integration step (s).
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrialArgs {
    /// Filter as NAME=PATH or PATH; repeatable.
    #[arg(long = "filter")]
    pub filters: Vec<String>,
    /// Simulation horizon (s).
    #[arg(long)]
    pub sim_horizon: Option<f64>,
    /// Attack onset (s).
    #[arg(long)]
    pub t_ack: Option<f64>,
    /// Attack amplitude (MW).
    #[arg(long)]
    pub attack: Option<f64>,
    /// Sinusoidal attack frequency (rad/s); a step when absent.
    #[arg(long)]
    pub attack_omega: Option<f64>,
    /// Alarm window (s).
    #[arg(long)]
    pub window: Option<f64>,
    /// Simulate the linearized plant.
    #[arg(long)]
    pub linearized: bool,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub trial: TrialArgs,
    /// Load step as CHANNEL:MW; repeatable.
    #[arg(long = "load")]
    pub loads: Vec<String>,
    /// Load step onset (s).
    #[arg(long)]
    pub t_load: Option<f64>,
    /// Run this many random trials instead of a single scripted one.
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub nodes_per_trial: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub trial: TrialArgs,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub nodes_per_trial: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ConvergeArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub filter: FilterArgs,
    /// Existing scenario pool; generated when absent.
    #[arg(long)]
    pub scenarios: Option<PathBuf>,
    /// Pool size to generate.
    #[arg(long)]
    pub pool: Option<usize>,
    /// Comma-separated increasing sample sizes.
    #[arg(long)]
    pub schedule: Option<String>,
    #[arg(long)]
    pub directions: Option<usize>,
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Trained filter added to the sampled directions.
    #[arg(long = "filter")]
    pub trained: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Infeasible => 1,
                ErrorClass::Input => 2,
                ErrorClass::Numerical => 3,
            })
        }
    }
}
