use std::path::PathBuf;

use clap::{Parser, ValueEnum};
use ridge_identity::identity::DEFAULT_TOL;
use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Batch fit and fitted values.
    Fit,
    /// Online predictions and variances, step by step.
    Trace,
    /// Certify the online/batch loss identity.
    VerifyIdentity,
    /// Audit the online loss bounds.
    AuditBounds,
    /// Follow the identity as the ridge goes to zero.
    ZeroRidge,
    /// Simulate the non-compact counterexample.
    Counterexample,
    /// Compare the Bayesian mixture with online ridge regression.
    BayesCheck,
    /// Decay of the predictive variances and the loss ratio.
    DtDecay,
}

/// Online and batch kernel ridge regression, with exact loss checks.
///
/// Every run writes a JSON report. Exit status is 0 when all checks pass,
/// 2 when a checked identity or inequality fails numerically, and 1 on
/// bad input.
#[derive(Debug, Parser)]
#[command(name = "ridge-identity", version)]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    /// `linear`, `rbf:<b>`, `poly:<degree>:<offset>`, `delta` or `shifted:<base>:<alpha>`.
    #[arg(long, default_value = "linear")]
    pub kernel: String,
    /// Ridge parameter `a`.
    #[arg(long, default_value_t = 1.0)]
    pub ridge: f64,
    /// Clip predictions to `[-Y, Y]`; also the outcome bound for `audit-bounds`.
    #[arg(long)]
    pub clip: Option<f64>,
    /// CSV with header `x0,...,x{n-1},y`.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Report destination; stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// `counterexample:<k>`, `compact-rbf:<T>` or `ortho-drop:<core.csv>:<count>`.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Bound `c_F` with `K(x,x) ≤ c_F²` for the multiplicative audit.
    #[arg(long)]
    pub cf: Option<f64>,
    /// Bound `B` on signal norms for the linear audits.
    #[arg(long)]
    pub xbound: Option<f64>,
    /// Threshold on `d_t` for `dt-decay`.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Quadrature points per axis for `bayes-check`.
    #[arg(long)]
    pub n_grid: Option<usize>,
    /// Also write the trace as CSV to this path.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: Command,
    pub kernel: String,
    pub ridge_a: f64,
    pub clip: Option<f64>,
    pub input_path: Option<String>,
    pub output_path: Option<String>,
    pub tol: f64,
    pub seed: u64,
    pub scenario: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cf: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xbound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_grid: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv_path: Option<String>,
}

impl RunConfig {
    pub fn new(command: Command) -> Self {
        RunConfig {
            command,
            kernel: "linear".into(),
            ridge_a: 1.0,
            clip: None,
            input_path: None,
            output_path: None,
            tol: DEFAULT_TOL,
            seed: 0,
            scenario: None,
            cf: None,
            xbound: None,
            eps: None,
            n_grid: None,
            csv_path: None,
        }
    }
}

fn path_string(p: Option<PathBuf>) -> Option<String> {
    p.map(|p| p.display().to_string())
}

impl From<Cli> for RunConfig {
    fn from(cli: Cli) -> Self {
        RunConfig {
            command: cli.command,
            kernel: cli.kernel,
            ridge_a: cli.ridge,
            clip: cli.clip,
            input_path: path_string(cli.input),
            output_path: path_string(cli.output),
            tol: cli.tol,
            seed: cli.seed,
            scenario: cli.scenario,
            cf: cli.cf,
            xbound: cli.xbound,
            eps: cli.eps,
            n_grid: cli.n_grid,
            csv_path: path_string(cli.csv),
        }
    }
}
