//! Command-line operator surface.
//!
//! Exit codes: 0 success, 1 runtime failure (including a failed check),
//! 2 invalid configuration or usage.

pub mod config;
pub mod run;
pub mod tools;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{Overrides, RunConfig};
pub use run::{execute, Manifest, MetricsRecord, RunResult, SweepRow};
pub use tools::{AttackMethod, CurveRow, EvalReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Check(String),
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

impl From<crate::Error> for CliError {
    fn from(e: crate::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Check(_) | CliError::Runtime(_) => EXIT_FAILURE,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "advsel", version, about = "Adversarial training with loss-ranked data selection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write metrics, checkpoints and a manifest.
    Train(TrainArgs),
    /// Standard and robust accuracy of a checkpoint.
    Eval(EvalArgs),
    /// Attack a dataset and write the adversarial copy plus a per-sample report.
    Attack(AttackArgs),
    /// Train once per P_up value and tabulate the final accuracies.
    SweepPup(SweepArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Convert a metrics stream into a per-epoch CSV.
    ExportCurves(ExportArgs),
}

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: tools::DataArgs,
    #[command(flatten)]
    pub attack: tools::AttackFlags,
    /// Write a JSON report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct AttackArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: tools::DataArgs,
    #[command(flatten)]
    pub attack: tools::AttackFlags,
    /// Attacked dataset, in the cache format.
    #[arg(long)]
    pub out: PathBuf,
    /// Write the per-sample JSON report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated P_up values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub pups: Vec<f64>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, clap::Args)]
pub struct GradcheckArgs {
    /// Comma-separated layer widths, input first.
    #[arg(long, value_delimiter = ',', default_value = "4,8,8,3")]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Perturb the analytic gradient of this layer before checking.
    #[arg(long)]
    pub inject_fault: Option<usize>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct ExportArgs {
    /// metrics.jsonl from a run.
    #[arg(long)]
    pub metrics: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Train(a) => run::cmd_train(a),
        Command::Eval(a) => tools::cmd_eval(a),
        Command::Attack(a) => tools::cmd_attack(a),
        Command::SweepPup(a) => run::cmd_sweep_pup(a),
        Command::Gradcheck(a) => tools::cmd_gradcheck(a),
        Command::ExportCurves(a) => tools::cmd_export_curves(a),
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            e.exit_code()
        }
    }
}
