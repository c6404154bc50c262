//! `psreval` command-line front end.
//!
//! Exit status: 0 on success, 2 for usage errors, 3 for data errors and 4
//! for numeric failures. Set `PSREVAL_THREADS` (or `RAYON_NUM_THREADS`) to
//! bound the worker pool; results do not depend on it.

mod commands;
mod json;
mod svg;
mod table;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use psreval::ErrorKind;

#[derive(Debug, Parser)]
#[command(name = "psreval", version, about = "Evaluate probabilistic classifiers with proper scoring rules")]
struct Cli {
    /// Output format for stdout.
    #[arg(long, value_enum, global = true, default_value_t = Format::Table)]
    format: Format,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Json,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic Gaussian datasets with known optimal posteriors.
    Synth(SynthArgs),
    /// Compute metrics on a posterior table.
    Eval(EvalArgs),
    /// Fit and apply a calibration transform.
    Calibrate(CalibrateArgs),
    /// Weighted Bayes-risk curve of a binary dataset.
    Riskcurve(RiskCurveArgs),
    /// Bootstrap confidence interval for one metric.
    Bootstrap(BootstrapArgs),
    /// Brute-force checks of scoring-rule and divergence properties.
    #[command(subcommand)]
    Probe(ProbeCommand),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Posterior table (CSV with a `label` column and one column per class).
    #[arg(long)]
    pub data: PathBuf,
    /// Interpret the table as log-probabilities or logits.
    #[arg(long)]
    pub log_domain: bool,
    /// Class priors used for expectations, e.g. `0.9,0.1`.
    #[arg(long)]
    pub priors: Option<String>,
    /// Posterior floor applied before any logarithm.
    #[arg(long, default_value_t = psreval::DEFAULT_FLOOR)]
    pub floor: f64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long)]
    pub n: Option<usize>,
    /// Prior of the first class.
    #[arg(long, default_value_t = 0.8)]
    pub p1: f64,
    /// Per-dimension variance of the class-conditional Gaussians.
    #[arg(long, default_value_t = 0.15)]
    pub sigma: f64,
    /// Log-domain scale for the scaled systems.
    #[arg(long, default_value_t = 5.0)]
    pub scale: f64,
    #[arg(long)]
    pub seed: u64,
    /// Write the four binary risk-curve systems (cal, mcs-u, mcs-o, cal-h) instead.
    #[arg(long)]
    pub riskcurve_preset: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Comma-separated metric specs (ce, bs, nce, nbs, nrisk:<cost>, ece[:M], ecemc[:M], rcl:<rule>:<method>:<protocol>).
    #[arg(long, default_value = "nce,nbs")]
    pub metrics: String,
    /// Seed for cross-validation folds; required when a metric uses `xv`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// dp, temp, hist[:M] or pav.
    #[arg(long)]
    pub method: String,
    /// tt, xv:<k> or heldout:<path>.
    #[arg(long, default_value = "xv:5")]
    pub protocol: String,
    /// Required for `xv`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory receiving calibrated.csv, transform.json and report.json.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct RiskCurveArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub log_domain: bool,
    #[arg(long, default_value_t = psreval::DEFAULT_FLOOR)]
    pub floor: f64,
    /// uniform or beta22.
    #[arg(long, default_value = "uniform")]
    pub weight: String,
    #[arg(long, default_value_t = psreval::epsr::DEFAULT_RISK_GRID)]
    pub grid: usize,
    /// CSV of (a1, weighted_risk).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BootstrapArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub metric: String,
    #[arg(long, default_value_t = psreval::resample::DEFAULT_REPLICATES)]
    pub b: usize,
    #[arg(long, default_value_t = psreval::resample::DEFAULT_GAMMA)]
    pub gamma: f64,
    #[arg(long)]
    pub seed: u64,
    /// Seed for cross-validation folds (defaults to `--seed`).
    #[arg(long)]
    pub fold_seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum ProbeCommand {
    /// Grid minimizer of the expected loss under `p`.
    Psr(PsrProbeArgs),
    /// Grid minimizer of the mean divergence to the rows of a binary table.
    Minimizer(MinimizerProbeArgs),
}

#[derive(Debug, Args)]
pub struct PsrProbeArgs {
    /// log or brier.
    #[arg(long, default_value = "log")]
    pub rule: String,
    /// True distribution, e.g. `0.3,0.7` (K = 2 or 3).
    #[arg(long)]
    pub p: String,
    #[arg(long, default_value_t = 0.01)]
    pub step: f64,
}

#[derive(Debug, Args)]
pub struct MinimizerProbeArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub log_domain: bool,
    /// l1_class2, l1_full, l2, kl or all.
    #[arg(long, default_value = "all")]
    pub divergence: String,
    #[arg(long, default_value_t = 0.001)]
    pub step: f64,
}

/// Failure carrying its exit status.
#[derive(Debug)]
pub struct Failure {
    pub kind: ErrorKind,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { kind: ErrorKind::Usage, message: message.into() }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        Self { kind: ErrorKind::Data, message: format!("i/o error on {}: {e}", path.display()) }
    }

    fn exit_code(&self) -> u8 {
        match self.kind {
            ErrorKind::Usage => 2,
            ErrorKind::Data => 3,
            ErrorKind::Numeric => 4,
        }
    }
}

impl From<psreval::Error> for Failure {
    fn from(e: psreval::Error) -> Self {
        Self { kind: e.kind(), message: e.to_string() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message.replace('\n', " "))
    }
}

fn init_threads() -> Result<(), Failure> {
    if let Ok(v) = std::env::var("PSREVAL_THREADS") {
        let n: usize = v.parse().map_err(|_| Failure::usage(format!("PSREVAL_THREADS='{v}' is not a count")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::usage(format!("cannot size thread pool: {e}")))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_threads().and_then(|_| match cli.command {
        Command::Synth(a) => commands::synth(&a, cli.format),
        Command::Eval(a) => commands::eval(&a, cli.format),
        Command::Calibrate(a) => commands::calibrate(&a, cli.format),
        Command::Riskcurve(a) => commands::riskcurve(&a, cli.format),
        Command::Bootstrap(a) => commands::bootstrap(&a, cli.format),
        Command::Probe(p) => commands::probe(&p, cli.format),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("psreval: error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
