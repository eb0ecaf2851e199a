use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use ridge_identity::bayes::{check_loss_average, run_merging, verify_linear_identity};
use ridge_identity::bounds::{
    asymptotic_ratio, audit_clipped_kernel, audit_clipped_linear, audit_det_bound, audit_multiplicative,
    decay_diagnostic, BoundAudit, DEFAULT_EPS_D, SLACK_TOL,
};
use ridge_identity::identity::{default_sweep, zero_ridge_study};
use ridge_identity::kernels::eval_kernel;
use ridge_identity::scenarios::{counterexample_expectations, generate, ratio_against_zero, ScenarioSpec};
use ridge_identity::{certify, fit_batch, run_online, Error, KernelSpec, Sample};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Command, RunConfig};
use crate::dataset::{parse_csv, write_trace_csv};
use crate::error::CliError;
use crate::report::{Report, Status, SCHEMA_VERSION};

/// Absolute tolerance for the quadrature form of the Bayesian loss check.
pub const QUADRATURE_TOL: f64 = 1e-4;
const DEFAULT_HALF_PAIRS: usize = 50;

struct Outcome {
    results: Value,
    violations: Vec<String>,
}

impl Outcome {
    fn ok(results: Value) -> Self {
        Outcome {
            results,
            violations: Vec::new(),
        }
    }

    fn check(&mut self, passed: bool, msg: impl FnOnce() -> String) {
        if !passed {
            self.violations.push(msg());
        }
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("results are always serializable")
}

/// Runs one command and builds its report. Never panics on bad input; the
/// status carries the outcome.
pub fn run(config: &RunConfig) -> Report {
    let (status, results, messages) = match execute(config) {
        Ok(out) if out.violations.is_empty() => (Status::Ok, out.results, Vec::new()),
        Ok(out) => (Status::Violation, out.results, out.violations),
        Err(e) => {
            let status = if e.is_violation() {
                Status::Violation
            } else {
                Status::InputError
            };
            let results = match &e {
                CliError::Core(Error::IdentityViolated(cert)) => json!({ "certificate": to_value(cert) }),
                _ => json!({}),
            };
            (status, results, vec![e.to_string()])
        }
    };
    Report {
        schema_version: SCHEMA_VERSION,
        config: config.clone(),
        status,
        results,
        messages,
    }
}

fn execute(config: &RunConfig) -> Result<Outcome, CliError> {
    validate(config)?;
    let spec: KernelSpec = config.kernel.parse()?;
    match config.command {
        Command::Fit => fit(config, &spec),
        Command::Trace => trace(config, &spec),
        Command::VerifyIdentity => verify_identity(config, &spec),
        Command::AuditBounds => audit_bounds(config, &spec),
        Command::ZeroRidge => zero_ridge(config, &spec),
        Command::Counterexample => counterexample(config, &spec),
        Command::BayesCheck => bayes_check(config, &spec),
        Command::DtDecay => dt_decay(config, &spec),
    }
}

fn validate(config: &RunConfig) -> Result<(), CliError> {
    let positive = |name: &str, v: f64| {
        if v.is_finite() && v > 0.0 {
            Ok(())
        } else {
            Err(CliError::Input(format!("--{name} must be positive and finite, got {v}")))
        }
    };
    positive("ridge", config.ridge_a)?;
    positive("tol", config.tol)?;
    for (name, v) in [
        ("clip", config.clip),
        ("cf", config.cf),
        ("xbound", config.xbound),
        ("eps", config.eps),
    ] {
        if let Some(v) = v {
            positive(name, v)?;
        }
    }
    Ok(())
}

fn load_sample(config: &RunConfig) -> Result<Sample, CliError> {
    match (&config.input_path, &config.scenario) {
        (Some(_), Some(_)) => Err(CliError::Input("give either --input or --scenario, not both".into())),
        (Some(path), None) => parse_csv(path),
        (None, Some(text)) => Ok(generate(&parse_scenario(text, config.seed)?)?),
        (None, None) => Err(CliError::Input("no data: pass --input or --scenario".into())),
    }
}

pub fn parse_scenario(text: &str, seed: u64) -> Result<ScenarioSpec, CliError> {
    let bad = || {
        CliError::Input(format!(
            "bad scenario {text:?}; expected counterexample:<k>, compact-rbf:<T> or ortho-drop:<core.csv>:<count>"
        ))
    };
    let count = |s: &str| s.parse::<usize>().map_err(|_| bad());
    let (name, rest) = text.split_once(':').ok_or_else(bad)?;
    let mut spec = match name {
        "counterexample" => ScenarioSpec::counterexample(count(rest)?),
        "compact-rbf" => ScenarioSpec::compact_rbf(count(rest)?),
        "ortho-drop" => {
            let (path, n) = rest.rsplit_once(':').ok_or_else(bad)?;
            ScenarioSpec::orthogonal_drop(parse_csv(path)?, count(n)?, seed)
        }
        _ => return Err(bad()),
    };
    spec.seed = seed;
    Ok(spec)
}

fn require_linear(spec: &KernelSpec, what: &str) -> Result<(), CliError> {
    if *spec == KernelSpec::Linear {
        Ok(())
    } else {
        Err(CliError::Input(format!("{what} is defined for the linear kernel only, got {spec}")))
    }
}

fn fit(config: &RunConfig, spec: &KernelSpec) -> Result<Outcome, CliError> {
    let sample = load_sample(config)?;
    let model = fit_batch(&sample, spec, config.ridge_a)?;
    let fitted = sample
        .examples()
        .iter()
        .map(|e| model.predict(&e.signal))
        .collect::<Result<Vec<_>, _>>()?;
    let loss = ridge_identity::regression::regularized_loss(&sample, spec, config.ridge_a, &model)?;
    Ok(Outcome::ok(json!({
        "coeffs": model.coeffs().as_slice(),
        "fitted": fitted,
        "norm_squared": model.norm_squared()?,
        "regularized_loss": loss,
        "t": sample.len(),
    })))
}

fn trace(config: &RunConfig, spec: &KernelSpec) -> Result<Outcome, CliError> {
    let sample = load_sample(config)?;
    let trace = run_online(&sample, spec, config.ridge_a, config.clip)?;
    if let Some(path) = &config.csv_path {
        let path = Path::new(path);
        let file = File::create(path).map_err(|e| CliError::io(path, e))?;
        write_trace_csv(&trace, BufWriter::new(file))?;
    }
    Ok(Outcome::ok(json!({
        "steps": to_value(&trace.steps),
        "total_clipped_loss": trace.total_clipped_loss(),
        "total_sq_loss": trace.total_sq_loss(),
        "total_weighted_loss": trace.total_weighted_loss(),
    })))
}

fn verify_identity(config: &RunConfig, spec: &KernelSpec) -> Result<Outcome, CliError> {
    let sample = load_sample(config)?;
    let cert = certify(&sample, spec, config.ridge_a, config.tol)?;
    Ok(Outcome::ok(json!({ "certificate": to_value(&cert) })))
}

fn audit_bounds(config: &RunConfig, spec: &KernelSpec) -> Result<Outcome, CliError> {
    let y_clip = config
        .clip
        .ok_or_else(|| CliError::Input("audit-bounds needs the outcome bound --clip Y".into()))?;
    let sample = load_sample(config)?;
    let a = config.ridge_a;

    let c_f = match config.cf {
        Some(c) => c,
        None => {
            let mut max_kxx = 0.0f64;
            for e in sample.examples() {
                max_kxx = max_kxx.max(eval_kernel(spec, &e.signal, &e.signal)?);
            }
            if max_kxx > 0.0 {
                max_kxx.sqrt()
            } else {
                1.0
            }
        }
    };
    let mut audits: Vec<BoundAudit> = vec![
        audit_multiplicative(&sample, spec, a, c_f)?,
        audit_clipped_kernel(&sample, spec, a, y_clip)?,
    ];
    if *spec == KernelSpec::Linear {
        let b = match config.xbound {
            Some(b) => b,
            None => {
                let max_norm = sample
                    .examples()
                    .iter()
                    .map(|e| e.signal.coords().iter().map(|v| v * v).sum::<f64>().sqrt())
                    .fold(0.0, f64::max);
                if max_norm > 0.0 {
                    max_norm
                } else {
                    1.0
                }
            }
        };
        audits.push(audit_clipped_linear(&sample, a, y_clip, b)?);
        audits.push(audit_det_bound(&sample.design_matrix(), a)?);
    }

    let mut out = Outcome::ok(json!({ "audits": to_value(&audits) }));
    for audit in &audits {
        out.check(audit.holds, || {
            format!("{} bound fails: lhs {} > rhs {}", audit.name, audit.lhs, audit.rhs)
        });
    }
    Ok(out)
}

fn zero_ridge(config: &RunConfig, spec: &KernelSpec) -> Result<Outcome, CliError> {
    let sample = load_sample(config)?;
    let study = zero_ridge_study(&sample, spec, &default_sweep())?;
    let mut out = Outcome::ok(json!({
        "final_gap": study.final_gap(),
        "study": to_value(&study),
    }));
    out.check(study.monotone, || "gap to the null-space limit is not monotone along the sweep".into());
    Ok(out)
}

fn counterexample(config: &RunConfig, spec: &KernelSpec) -> Result<Outcome, CliError> {
    require_linear(spec, "counterexample")?;
    if config.input_path.is_some() {
        return Err(CliError::Input("counterexample generates its own data; drop --input".into()));
    }
    let k = match &config.scenario {
        None => DEFAULT_HALF_PAIRS,
        Some(text) => match text.split_once(':') {
            Some(("counterexample", k)) => k
                .parse()
                .map_err(|_| CliError::Input(format!("bad pair count in {text:?}")))?,
            _ => return Err(CliError::Input(format!("counterexample takes --scenario counterexample:<k>, got {text:?}"))),
        },
    };
    let a = config.ridge_a;
    let sample = generate(&ScenarioSpec::counterexample(k))?;
    let trace = run_online(&sample, spec, a, None)?;
    let expected = counterexample_expectations(a, k)?;
    let gammas = trace.gammas();
    let gamma_error = gammas
        .iter()
        .zip(&expected.predicted_gammas)
        .map(|(g, e)| (g - e).abs())
        .fold(0.0, f64::max);
    let ratios = ratio_against_zero(&trace);
    let ratio_error = ratios
        .iter()
        .filter(|r| r.t % 2 == 0)
        .map(|r| (r.ratio - expected.limit_ratio).abs())
        .fold(0.0, f64::max);

    let mut out = Outcome::ok(json!({
        "gammas": gammas,
        "half_pairs": k,
        "limit_ratio": expected.limit_ratio,
        "max_gamma_error": gamma_error,
        "max_even_ratio_error": ratio_error,
        "predicted_gammas": expected.predicted_gammas,
        "ratios": to_value(&ratios),
    }));
    out.check(gamma_error <= config.tol, || format!("predictions deviate from 0 and 1/(1+a) by {gamma_error}"));
    out.check(ratio_error <= config.tol, || format!("even-prefix ratios deviate from the limit by {ratio_error}"));
    Ok(out)
}

fn bayes_check(config: &RunConfig, spec: &KernelSpec) -> Result<Outcome, CliError> {
    require_linear(spec, "bayes-check")?;
    let sample = load_sample(config)?;
    let a = config.ridge_a;
    let merged = run_merging(&sample, a)?;
    let trace = run_online(&sample, spec, a, None)?;
    let mut mean_error = 0.0f64;
    let mut variance_error = 0.0f64;
    for (m, s) in merged.steps.iter().zip(&trace.steps) {
        mean_error = mean_error.max((m.prediction.mean - s.gamma).abs() / s.gamma.abs().max(1.0));
        let var = a + s.d;
        variance_error = variance_error.max((m.prediction.variance - var).abs() / var);
    }
    let cert = verify_linear_identity(&sample, a)?;

    let mut results = json!({
        "cumulative_loss": merged.final_state.cumulative_loss,
        "decomposed_loss": merged.decomposed_loss(),
        "max_mean_error": mean_error,
        "max_variance_error": variance_error,
        "primal_certificate": to_value(&cert),
    });
    let mut loss_residual = None;
    if let Some(n_grid) = config.n_grid {
        let check = check_loss_average(&sample, a, n_grid)?;
        loss_residual = Some(check.residual());
        results["loss_average"] = json!({
            "lhs": check.lhs,
            "residual": check.residual(),
            "rhs": check.rhs,
        });
    }

    let mut out = Outcome::ok(results);
    out.check(mean_error <= config.tol, || format!("mixture mean differs from ridge prediction by {mean_error}"));
    out.check(variance_error <= config.tol, || {
        format!("mixture variance differs from a + d_t by {variance_error}")
    });
    if let Some(r) = loss_residual {
        out.check(r <= QUADRATURE_TOL, || format!("loss average differs from quadrature by {r}"));
    }
    Ok(out)
}

fn dt_decay(config: &RunConfig, spec: &KernelSpec) -> Result<Outcome, CliError> {
    let sample = load_sample(config)?;
    let a = config.ridge_a;
    let diag = decay_diagnostic(&sample, spec, a, config.eps.unwrap_or(DEFAULT_EPS_D))?;
    let ratios = asymptotic_ratio(&sample, spec, a)?;
    let min_ratio = ratios.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);

    let mut out = Outcome::ok(json!({
        "decay": to_value(&diag),
        "final_d": diag.d_sequence.last(),
        "final_ratio": ratios.last().map(|r| r.ratio),
        "ratios": to_value(&ratios),
    }));
    // online loss can never beat the regularized minimum
    out.check(ratios.is_empty() || min_ratio >= 1.0 - SLACK_TOL, || {
        format!("loss ratio drops to {min_ratio} < 1")
    });
    Ok(out)
}
