use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "neyman", version, about = "Average treatment effects through the Riesz representer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a dataset from a simulation design and write it with a truth sidecar.
    Simulate(SimulateArgs),
    /// Fit nuisances and report an ATE estimate.
    Estimate(EstimateArgs),
    /// Balance residuals of a weights file.
    BalanceCheck(BalanceArgs),
    /// Compare 1-NN matching weights with squared-loss Riesz regression on the Voronoi basis.
    EquivalenceCheck(EquivalenceArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Preset name (`linear-logit`, `constant-propensity`) or a design JSON file.
    #[arg(long)]
    pub dgp: String,
    /// Covariate dimension for presets.
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Dataset CSV; the sidecar goes next to it as `<stem>.truth.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorArg {
    Ipw,
    Plugin,
    Onestep,
    Tmle,
    Match,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RieszArg {
    LsLinear,
    KlLogistic,
    Matching,
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PipelineArg {
    Recommended,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Standardized,
    Euclidean,
}

impl From<MetricArg> for neyman::basis::Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Standardized => Self::Standardized,
            MetricArg::Euclidean => Self::Euclidean,
        }
    }
}

/// Basis family named on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisArg {
    Raw,
    RawIntercept,
    Intercept,
    Poly(usize),
    OneHotArm,
    Voronoi,
}

impl FromStr for BasisArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "raw" => Ok(Self::Raw),
            "raw+intercept" => Ok(Self::RawIntercept),
            "intercept" => Ok(Self::Intercept),
            "one-hot-arm" => Ok(Self::OneHotArm),
            "voronoi" => Ok(Self::Voronoi),
            _ => match s.strip_prefix("poly:").map(str::parse::<usize>) {
                Some(Ok(d)) => Ok(Self::Poly(d)),
                _ => Err(format!(
                    "unknown basis `{s}` (raw, raw+intercept, intercept, poly:D, one-hot-arm, voronoi)"
                )),
            },
        }
    }
}

impl std::fmt::Display for BasisArg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Raw => write!(f, "raw"),
            Self::RawIntercept => write!(f, "raw+intercept"),
            Self::Intercept => write!(f, "intercept"),
            Self::Poly(d) => write!(f, "poly:{d}"),
            Self::OneHotArm => write!(f, "one-hot-arm"),
            Self::Voronoi => write!(f, "voronoi"),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    /// Input CSV with header `y,d,x1,...,xk`. Omit with `--reps` to simulate instead.
    #[arg(long, required_unless_present = "reps")]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, conflicts_with = "pipeline")]
    pub estimator: Option<EstimatorArg>,
    #[arg(long, value_enum, conflicts_with = "pipeline")]
    pub riesz: Option<RieszArg>,
    /// Basis of the Riesz model.
    #[arg(long, default_value = "raw+intercept")]
    pub basis: BasisArg,
    /// Basis of the outcome regression (lifted to both arms).
    #[arg(long, default_value = "raw+intercept")]
    pub outcome_basis: BasisArg,
    /// Z-score covariates before evaluating polynomial and raw bases.
    #[arg(long)]
    pub standardize: bool,
    /// Ridge coefficient on the Riesz coefficients.
    #[arg(long, default_value_t = 1e-6)]
    pub lambda: f64,
    /// Matches per unit for `--estimator match`.
    #[arg(long, default_value_t = 1)]
    pub matches: usize,
    #[arg(long, value_enum, default_value = "standardized")]
    pub metric: MetricArg,
    /// Weight each unit's Riesz loss by its squared outcome residual.
    #[arg(long, conflicts_with = "pipeline")]
    pub residual_weights: bool,
    /// Fixed recipe: outcome fit, logistic Riesz model, residual-weighted tailored loss, TMLE.
    #[arg(long, value_enum)]
    pub pipeline: Option<PipelineArg>,
    /// Truth sidecar written by `simulate`; enables the oracle representer and error terms.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Report destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-unit signed representer values, as a CSV with header `w`.
    #[arg(long)]
    pub weights_out: Option<PathBuf>,
    /// Monte Carlo mode: number of simulated replications.
    #[arg(long, requires = "dgp", conflicts_with_all = ["data", "truth", "weights_out"])]
    pub reps: Option<usize>,
    /// Worker threads for `--reps`.
    #[arg(long, default_value_t = 1, requires = "reps")]
    pub jobs: usize,
    /// Simulation design for `--reps`.
    #[arg(long, requires = "reps")]
    pub dgp: Option<String>,
    #[arg(long, default_value_t = 2, requires = "reps")]
    pub k: usize,
    #[arg(long, requires = "reps")]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormArg {
    Sbw,
    Eb,
}

#[derive(Debug, Args)]
pub struct BalanceArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// CSV with a single column `w`.
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long, default_value = "raw+intercept")]
    pub basis: BasisArg,
    #[arg(long)]
    pub standardize: bool,
    #[arg(long, value_enum)]
    pub form: FormArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EquivalenceArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "standardized")]
    pub metric: MetricArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
