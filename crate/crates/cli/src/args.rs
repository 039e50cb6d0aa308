use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use logsym_core::data::{Sex, ZeroPolicy};
use logsym_core::diagnostics::EnvelopeKind;

#[derive(Debug, Parser)]
#[command(name = "logsym", version, about = "Fit and compare age-period mortality models")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one model and write fit.json.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        spec: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Fit two models on the same table; write comparison.json and scatter.csv.
    Compare {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        spec2: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Simulated residual envelope; writes envelope.csv.
    Envelope {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        source: FitSource,
        /// location or dispersion for log-symmetric fits, deviance for Poisson.
        #[arg(long)]
        kind: Option<EnvelopeKind>,
        #[arg(long, default_value_t = 100)]
        m_sims: usize,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Spline component curves; writes curves.csv.
    Curves {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        source: FitSource,
        #[arg(long, default_value_t = 200)]
        grid_size: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Simulate a table from a truth document; writes mortality.csv and truth.json.
    Simulate {
        #[arg(long)]
        truth: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Mortality CSV (sex,site,age_lo,age_hi,year,deaths,population).
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub sex: Option<Sex>,
    #[arg(long)]
    pub site: Option<String>,
    /// Zero-count policy; overrides the spec document.
    #[arg(long)]
    pub policy: Option<ZeroPolicy>,
    /// Add 2 Σ log t to log-symmetric AICs.
    #[arg(long)]
    pub jacobian_adjust: bool,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct FitSource {
    /// A fit.json written by `logsym fit`.
    #[arg(long)]
    pub fit: Option<PathBuf>,
    /// A model spec to fit first.
    #[arg(long)]
    pub spec: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20130)]
    pub seed: u64,
    /// Overwrite existing output files.
    #[arg(long)]
    pub force: bool,
}
