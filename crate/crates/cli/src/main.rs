//! `isolab`: estimates, parameters and relation checks for isotropic log-concave measures.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(
    name = "isolab",
    version,
    about = "Monte Carlo laboratory for isotropic log-concave measures"
)]
struct Cli {
    /// Master seed.
    #[arg(long, env = "ISOLAB_SEED", global = true)]
    seed: Option<u64>,
    /// Sample batch size for moment, centroid-body and tilt estimates.
    #[arg(long, global = true)]
    samples: Option<usize>,
    /// Hit-and-run burn-in steps (default 100·n).
    #[arg(long, global = true)]
    burnin: Option<usize>,
    /// Hit-and-run thinning (default n).
    #[arg(long, global = true)]
    thinning: Option<usize>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Config file of `key = value` lines; flags win over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output path (JSONL records, CSV for `scan`); stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Start from the small smoke-test budget.
    #[arg(long, global = true)]
    quick: bool,
    /// Directory against which `file=` paths of hpoly specs resolve.
    #[arg(long, global = true)]
    base_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Single functionals: I_q, h_{Z_p}, w_q(Z_p), f_{π_E μ}(0), L brackets.
    Estimate(EstimateArgs),
    /// Parameters q_{-c}, q_*, r_sharp and their hereditary versions.
    Param(ParamArgs),
    /// Log-Laplace transform Λ(ξ).
    Laplace(LaplaceArgs),
    /// Tilt derivative identities: bar(μ'_x) = ∇Λ(x), Cov(μ'_x) = HessΛ(x).
    Tiltcheck(TiltArgs),
    /// Radial extent of Λ_p along random directions.
    Lambdagauge(GaugeArgs),
    /// Relation checks (tags: section-formula, Ik-width, theorem1-chain, ... or `all`).
    Check(CheckArgs),
    /// Sweep a quantity over n and write CSV.
    Scan(ScanArgs),
    /// Fitted constants against n from a `check` results file.
    Report(ReportArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize, PartialEq, Eq)]
enum Quantity {
    #[value(name = "Iq")]
    Iq,
    #[value(name = "supportZp")]
    SupportZp,
    #[value(name = "widthQ")]
    WidthQ,
    #[value(name = "fZero")]
    FZero,
    #[value(name = "Lbracket")]
    LBracket,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize, PartialEq, Eq)]
enum ParamName {
    #[value(name = "qmc")]
    Qmc,
    #[value(name = "qstar")]
    Qstar,
    #[value(name = "rsharp")]
    Rsharp,
    #[value(name = "qmcH")]
    QmcH,
    #[value(name = "rsharpH")]
    RsharpH,
}

#[derive(Args, Debug, Serialize, Clone)]
struct EstimateArgs {
    /// Measure spec `family:dim[,key=value...]`.
    #[arg(long)]
    measure: String,
    #[arg(long, value_enum)]
    quantity: Quantity,
    #[arg(long, allow_hyphen_values = true)]
    q: Option<f64>,
    #[arg(long)]
    p: Option<f64>,
    /// Direction `x1,x2,...` (normalized) or `random`.
    #[arg(long, allow_hyphen_values = true)]
    dir: Option<String>,
    /// Frame file or `random:k`.
    #[arg(long)]
    subspace: Option<String>,
    /// Direction-grid size for `widthQ`.
    #[arg(long, default_value_t = 1000)]
    dirs: usize,
}

#[derive(Args, Debug, Serialize, Clone)]
struct ParamArgs {
    #[arg(long)]
    measure: String,
    #[arg(long, value_enum)]
    name: ParamName,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long = "A")]
    a: Option<f64>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    haar: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
struct LaplaceArgs {
    #[arg(long)]
    measure: String,
    /// Point `x1,x2,...`.
    #[arg(long, allow_hyphen_values = true)]
    xi: String,
}

#[derive(Args, Debug, Serialize)]
struct TiltArgs {
    #[arg(long)]
    measure: String,
    #[arg(long, allow_hyphen_values = true)]
    x: String,
    /// Finite-difference step; default 1e-3·max(1, |x|).
    #[arg(long)]
    h: Option<f64>,
}

#[derive(Args, Debug, Serialize)]
struct GaugeArgs {
    #[arg(long)]
    measure: String,
    #[arg(long)]
    p: f64,
    #[arg(long, default_value_t = 200)]
    dirs: usize,
}

#[derive(Args, Debug, Serialize)]
struct CheckArgs {
    /// Relation tag or `all`.
    #[arg(long)]
    relation: String,
    /// Comma-separated measure specs; dimensions come from the n-grid.
    #[arg(long, default_value = "gaussian,cube,product-exponential")]
    measures: String,
    #[arg(long, default_value_t = 2)]
    nmin: usize,
    #[arg(long)]
    nmax: usize,
}

#[derive(Args, Debug, Serialize)]
struct ScanArgs {
    /// Measure spec without a dimension.
    #[arg(long)]
    measure: String,
    #[arg(long, value_enum, conflicts_with = "param")]
    quantity: Option<Quantity>,
    #[arg(long, value_enum)]
    param: Option<ParamName>,
    #[arg(long, allow_hyphen_values = true)]
    q: Option<f64>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long = "A")]
    a: Option<f64>,
    /// `random:k` subspace for `fZero` and `Lbracket`.
    #[arg(long)]
    subspace: Option<String>,
    #[arg(long, default_value_t = 1000)]
    dirs: usize,
    #[arg(long, default_value_t = 2)]
    nmin: usize,
    #[arg(long)]
    nmax: usize,
}

#[derive(Args, Debug, Serialize)]
struct ReportArgs {
    /// Results file written by `check`.
    #[arg(long)]
    input: PathBuf,
    /// Emit CSV instead of an aligned table.
    #[arg(long)]
    csv: bool,
}

/// Error class that maps to exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

/// Process outcome apart from errors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    Fail,
    Indeterminate,
}

fn error_code(err: &anyhow::Error) -> u8 {
    use isolab_core::Error as E;
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<E>() {
        Some(E::DegenerateMeasure(_)) | None => 4,
        Some(_) => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match commands::run(cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Fail) => ExitCode::from(1),
        Ok(Outcome::Indeterminate) => ExitCode::from(3),
        Err(err) => {
            let code = error_code(&err);
            eprintln!("isolab: {err:#}");
            ExitCode::from(code)
        }
    }
}
