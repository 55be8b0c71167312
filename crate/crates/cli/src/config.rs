//! Command-line grammar. The parsed configuration doubles as the
//! `config.echo` file, so every subcommand's arguments are serializable.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

pub const DEFAULT_MODEL: &str = "two-phase:p=0.5,a1=1,a2=4";

#[derive(Parser, Debug, Clone, Serialize, Deserialize, PartialEq)]
#[command(name = "hetsolve", version, about = "Regularized homogenization iteration for random elliptic equations")]
pub struct Cli {
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads (overridden by HETSOLVE_THREADS).
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Seed of the first sample; sample i uses seed-base + i.
    #[arg(long = "seed-base", global = true, default_value_t = 0)]
    pub seed_base: u64,
    /// Re-run the configuration echoed by an earlier run.
    #[arg(long = "from-config", global = true)]
    #[serde(skip)]
    pub from_config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Subcommand, Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Sample coefficient fields and dump edge conductances.
    GenerateField(GenerateArgs),
    /// Effective matrices from periodic cell problems.
    Homogenize(HomogenizeArgs),
    /// Direct CG solve of the Dirichlet problem.
    Solve(SolveArgs),
    /// Iterate the three-solve scheme.
    Iterate(IterateArgs),
    /// One round per (lambda, seed) and scaling summaries.
    ContractionSweep(SweepArgs),
    /// Both sides of the two-scale error bound.
    Twoscale(TwoScaleArgs),
    /// Scaling of regularized correctors with lambda.
    CorrectorStats(CorrectorStatsArgs),
    /// Extremal eigenvalues and CG iteration counts.
    ConditionNumbers(ConditionArgs),
    /// O_s calibration of a CSV column.
    OsStats(OsStatsArgs),
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum Init {
    Hom,
    Zero,
    Random,
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Plain,
    Jacobi,
}

/// Sample description shared by most subcommands.
#[derive(Args, Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SampleArgs {
    /// Dimension.
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    /// Nodes per unit length.
    #[arg(long, default_value_t = 2)]
    pub m: usize,
    /// Coefficient model, e.g. two-phase:p=0.5,a1=1,a2=4.
    #[arg(long, default_value = DEFAULT_MODEL)]
    pub model: String,
    /// Ellipticity constant; defaults to the smallest one the model admits.
    #[arg(long)]
    pub ellipticity: Option<f64>,
    /// Number of samples.
    #[arg(long, default_value_t = 1)]
    pub seeds: usize,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GenerateArgs {
    /// Side length.
    #[arg(long)]
    pub r: f64,
    #[command(flatten)]
    pub sample: SampleArgs,
    /// Sample on a torus instead of a Dirichlet box.
    #[arg(long)]
    pub periodic: bool,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct HomogenizeArgs {
    /// Torus side.
    #[arg(long = "L")]
    pub l: f64,
    #[command(flatten)]
    pub sample: SampleArgs,
    /// Regularization scales for corrector norms.
    #[arg(long = "lambda-list", value_delimiter = ',')]
    pub lambda_list: Vec<f64>,
    /// Cell-problem CG tolerance.
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SolveArgs {
    #[arg(long)]
    pub r: f64,
    #[command(flatten)]
    pub sample: SampleArgs,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, value_enum, default_value_t = Variant::Jacobi)]
    pub cg: Variant,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct IterateArgs {
    #[arg(long)]
    pub r: f64,
    #[command(flatten)]
    pub sample: SampleArgs,
    #[arg(long)]
    pub lambda: f64,
    #[arg(long, default_value_t = 5)]
    pub rounds: usize,
    #[arg(long, value_enum, default_value_t = Init::Hom)]
    pub init: Init,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    /// Stop once the error reaches 100·tol·‖u‖ instead of running every round.
    #[arg(long = "early-stop")]
    pub early_stop: bool,
    /// Torus side for the effective matrix (defaults to r).
    #[arg(long = "L")]
    pub l: Option<f64>,
    #[arg(long, value_enum, default_value_t = Variant::Jacobi)]
    pub cg: Variant,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SweepArgs {
    #[arg(long)]
    pub r: f64,
    #[command(flatten)]
    pub sample: SampleArgs,
    #[arg(long = "lambda-list", value_delimiter = ',', required = true)]
    pub lambda_list: Vec<f64>,
    #[arg(long, value_enum, default_value_t = Init::Hom)]
    pub init: Init,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long = "L")]
    pub l: Option<f64>,
    /// Tail exponent for the O_s summary.
    #[arg(long, default_value_t = 1.0)]
    pub s: f64,
    #[arg(long, value_enum, default_value_t = Variant::Jacobi)]
    pub cg: Variant,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TwoScaleArgs {
    #[arg(long)]
    pub r: f64,
    #[command(flatten)]
    pub sample: SampleArgs,
    #[arg(long)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.0)]
    pub mu: f64,
    #[arg(long = "L")]
    pub l: Option<f64>,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CorrectorStatsArgs {
    #[arg(long = "L")]
    pub l: f64,
    #[command(flatten)]
    pub sample: SampleArgs,
    #[arg(long = "lambda-list", value_delimiter = ',', required = true)]
    pub lambda_list: Vec<f64>,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ConditionArgs {
    #[arg(long = "r-list", value_delimiter = ',', required = true)]
    pub r_list: Vec<f64>,
    #[command(flatten)]
    pub sample: SampleArgs,
    /// Regularization parameters; a row with lambda = 0 is always included.
    #[arg(long = "lambda-list", value_delimiter = ',')]
    pub lambda_list: Vec<f64>,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    /// Lanczos steps.
    #[arg(long = "power-iters", default_value_t = 60)]
    pub power_iters: usize,
    #[arg(long, value_enum, default_value_t = Variant::Plain)]
    pub cg: Variant,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct OsStatsArgs {
    /// CSV file holding the samples.
    #[arg(long)]
    pub input: PathBuf,
    /// Column name or 0-based index.
    #[arg(long, default_value = "0")]
    pub column: String,
    /// Tail exponents.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub s: Vec<f64>,
}
