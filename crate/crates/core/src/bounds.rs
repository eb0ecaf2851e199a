//! Audits of the loss bounds implied by the identity, plus the `d_t` decay
//! and asymptotic-ratio diagnostics.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::{eval_kernel, gram, KernelSpec};
use crate::pdlinalg::{cholesky, shifted};
use crate::regression::{check_ridge, fit_batch, fit_primal, regularized_loss, run_online, Sample};

/// Slack above `−SLACK_TOL · scale` counts as holding.
pub const SLACK_TOL: f64 = 1e-10;
pub const DEFAULT_EPS_D: f64 = 0.05;
const HYPOTHESIS_TOL: f64 = 1e-12;

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct BoundContext {
    pub a: f64,
    pub t: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y_clip: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_f: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundAudit {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub holds: bool,
    pub context: BoundContext,
    /// Named intermediate quantities.
    pub details: BTreeMap<String, f64>,
}

impl BoundAudit {
    fn new(name: &str, lhs: f64, rhs: f64, context: BoundContext) -> Self {
        let slack = rhs - lhs;
        let scale = 1f64.max(lhs.abs()).max(rhs.abs());
        BoundAudit {
            name: name.to_string(),
            lhs,
            rhs,
            slack,
            holds: slack >= -SLACK_TOL * scale,
            context,
            details: BTreeMap::new(),
        }
    }

    fn detail(mut self, key: &str, value: f64) -> Self {
        self.details.insert(key.to_string(), value);
        self
    }

    pub fn detail_value(&self, key: &str) -> Option<f64> {
        self.details.get(key).copied()
    }
}

fn check_outcomes_within(sample: &Sample, y_clip: f64) -> Result<()> {
    if !(y_clip.is_finite() && y_clip > 0.0) {
        return Err(Error::input(format!("outcome bound must be positive, got {y_clip}")));
    }
    for (t, e) in sample.examples().iter().enumerate() {
        if e.outcome.abs() > y_clip {
            return Err(Error::input(format!(
                "outcome y_{} = {} lies outside [-{y_clip}, {y_clip}]",
                t + 1,
                e.outcome
            )));
        }
    }
    Ok(())
}

fn term_min(sample: &Sample, spec: &KernelSpec, a: f64) -> Result<f64> {
    let model = fit_batch(sample, spec, a)?;
    regularized_loss(sample, spec, a, &model)
}

/// `ln det(I + K/a)` by Cholesky.
fn log_det_normalized(sample: &Sample, spec: &KernelSpec, a: f64) -> Result<f64> {
    if sample.is_empty() {
        return Ok(0.0);
    }
    let k = gram(spec, &sample.signals())?.into_entries();
    Ok(cholesky(&shifted(&(k / a), 1.0))?.logdet())
}

/// `Σ(γ_t − y_t)² ≤ (1 + c_F²/a) · min_f(…)`, given `K(x,x) ≤ c_F²`.
pub fn audit_multiplicative(sample: &Sample, spec: &KernelSpec, a: f64, c_f: f64) -> Result<BoundAudit> {
    check_ridge(a)?;
    if !(c_f.is_finite() && c_f > 0.0) {
        return Err(Error::input(format!("c_F must be positive, got {c_f}")));
    }
    let c2 = c_f * c_f;
    for (t, e) in sample.examples().iter().enumerate() {
        let kxx = eval_kernel(spec, &e.signal, &e.signal)?;
        if kxx > c2 * (1.0 + HYPOTHESIS_TOL) {
            return Err(Error::input(format!(
                "K(x_{0}, x_{0}) = {kxx} exceeds c_F² = {c2}",
                t + 1
            )));
        }
    }
    let lhs = run_online(sample, spec, a, None)?.total_sq_loss();
    let min = term_min(sample, spec, a)?;
    let context = BoundContext {
        a,
        t: sample.len(),
        c_f: Some(c_f),
        ..Default::default()
    };
    Ok(BoundAudit::new("multiplicative", lhs, (1.0 + c2 / a) * min, context).detail("term_min", min))
}

/// Clipped online loss against `min_f(…) + 4Y² ln det(I + K/a)`.
pub fn audit_clipped_kernel(sample: &Sample, spec: &KernelSpec, a: f64, y_clip: f64) -> Result<BoundAudit> {
    check_ridge(a)?;
    check_outcomes_within(sample, y_clip)?;
    let trace = run_online(sample, spec, a, Some(y_clip))?;
    let lhs = trace.total_clipped_loss().unwrap_or(0.0);
    let min = term_min(sample, spec, a)?;
    let log_det = log_det_normalized(sample, spec, a)?;
    let rhs = min + 4.0 * y_clip * y_clip * log_det;
    let context = BoundContext {
        a,
        t: sample.len(),
        y_clip: Some(y_clip),
        ..Default::default()
    };
    Ok(BoundAudit::new("clipped_kernel", lhs, rhs, context)
        .detail("term_min", min)
        .detail("log_det", log_det)
        .detail("unclipped_loss", trace.total_sq_loss()))
}

/// Clipped linear ridge regression against
/// `min_θ(…) + 4Y² n ln(1 + TB²/(an))`, given `‖x_t‖ ≤ B`.
///
/// The kernel-form right-hand side is recorded as `kernel_rhs`; it never
/// exceeds this one.
pub fn audit_clipped_linear(sample: &Sample, a: f64, y_clip: f64, b: f64) -> Result<BoundAudit> {
    check_ridge(a)?;
    check_outcomes_within(sample, y_clip)?;
    if !(b.is_finite() && b > 0.0) {
        return Err(Error::input(format!("signal norm bound must be positive, got {b}")));
    }
    for (t, e) in sample.examples().iter().enumerate() {
        let norm = e.signal.coords().iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > b * (1.0 + HYPOTHESIS_TOL) {
            return Err(Error::input(format!("‖x_{}‖ = {norm} exceeds B = {b}", t + 1)));
        }
    }
    let n = sample.dimension();
    let t_len = sample.len();
    let kernel = audit_clipped_kernel(sample, &KernelSpec::Linear, a, y_clip)?;
    let primal_min = fit_primal(sample, a)?.objective(sample)?;
    let regret = if n == 0 {
        0.0
    } else {
        4.0 * y_clip * y_clip * n as f64 * (t_len as f64 * b * b / (a * n as f64)).ln_1p()
    };
    let context = BoundContext {
        a,
        t: t_len,
        y_clip: Some(y_clip),
        b: Some(b),
        n: Some(n),
        ..Default::default()
    };
    Ok(BoundAudit::new("clipped_linear", kernel.lhs, primal_min + regret, context)
        .detail("term_min", primal_min)
        .detail("kernel_rhs", kernel.rhs))
}

/// `det(I + XᵀX/a) ≤ (1 + TB²/(an))ⁿ` with `B` the largest column norm of
/// the `n × T` matrix `X`. Also checks Sylvester's
/// `det(I + XᵀX/a) = det(I + XXᵀ/a)`; a Sylvester mismatch beyond `1e-9`
/// relative marks the audit as failing.
pub fn audit_det_bound(x: &DMatrix<f64>, a: f64) -> Result<BoundAudit> {
    check_ridge(a)?;
    let (n, t) = x.shape();
    let b = x.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
    let log_small = if t == 0 {
        0.0
    } else {
        cholesky(&shifted(&(x.transpose() * x / a), 1.0))?.logdet()
    };
    let log_big = if n == 0 {
        0.0
    } else {
        cholesky(&shifted(&(x * x.transpose() / a), 1.0))?.logdet()
    };
    let sylvester = (log_small - log_big).exp_m1().abs();
    let rhs = if n == 0 {
        1.0
    } else {
        (n as f64 * (t as f64 * b * b / (a * n as f64)).ln_1p()).exp()
    };
    let context = BoundContext {
        a,
        t,
        b: Some(b),
        n: Some(n),
        ..Default::default()
    };
    let mut audit = BoundAudit::new("det_bound", log_small.exp(), rhs, context)
        .detail("log_lhs", log_small)
        .detail("sylvester_residual", sylvester);
    audit.holds &= sylvester <= 1e-9;
    Ok(audit)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecayDiagnostic {
    pub d_sequence: Vec<f64>,
    /// Largest `d_t` over the last quarter of the run.
    pub tail_max: f64,
    /// First 1-based step after which every `d_t` stays below `eps_d`.
    pub threshold_step: Option<usize>,
    pub eps_d: f64,
}

pub fn decay_diagnostic(sample: &Sample, spec: &KernelSpec, a: f64, eps_d: f64) -> Result<DecayDiagnostic> {
    if !(eps_d > 0.0) {
        return Err(Error::input(format!("eps_d must be positive, got {eps_d}")));
    }
    let d_sequence = run_online(sample, spec, a, None)?.variances();
    let len = d_sequence.len();
    let tail_start = len - len.div_ceil(4);
    let tail_max = d_sequence[tail_start..].iter().copied().fold(0.0, f64::max);
    // scan backwards for the last step at or above the threshold
    let threshold_step = match d_sequence.iter().rposition(|&d| d >= eps_d) {
        None if len == 0 => None,
        None => Some(1),
        Some(last) if last + 1 < len => Some(last + 2),
        Some(_) => None,
    };
    Ok(DecayDiagnostic {
        d_sequence,
        tail_max,
        threshold_step,
        eps_d,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RatioPoint {
    pub t: usize,
    pub online_loss: f64,
    pub term_min: f64,
    pub ratio: f64,
}

/// `R_T = Σ_{t≤T} (γ_t − y_t)² / min_f(…)_T` for every prefix `T`.
///
/// The prefix minima are read off one Cholesky factor of the full
/// `K + aI`: its leading blocks factor every prefix, so
/// `min_T = a ‖(L⁻¹Y)_{1..T}‖²`. Prefixes with a minimum below `1e-12` are
/// skipped.
pub fn asymptotic_ratio(sample: &Sample, spec: &KernelSpec, a: f64) -> Result<Vec<RatioPoint>> {
    let trace = run_online(sample, spec, a, None)?;
    if sample.is_empty() {
        return Ok(Vec::new());
    }
    let k = gram(spec, &sample.signals())?.into_entries();
    let z = cholesky(&shifted(&k, a))?.forward_solve(&sample.outcomes())?;
    let mut out = Vec::new();
    let mut online = 0.0;
    let mut min = 0.0;
    for (i, step) in trace.steps.iter().enumerate() {
        online += step.sq_loss;
        min += a * z[i] * z[i];
        if min >= 1e-12 {
            out.push(RatioPoint {
                t: i + 1,
                online_loss: online,
                term_min: min,
                ratio: online / min,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn d1() -> Sample {
        Sample::from_rows(1, vec![vec![1.0]], vec![1.0]).unwrap()
    }

    fn counterexample(k: usize) -> Sample {
        let mut s = Sample::new(k);
        for i in 0..k {
            let mut e = vec![0.0; k];
            e[i] = 1.0;
            s.push(e.clone(), 1.0).unwrap();
            s.push(e, 0.0).unwrap();
        }
        s
    }

    #[test]
    fn multiplicative_d1_is_tight() {
        let audit = audit_multiplicative(&d1(), &KernelSpec::Linear, 1.0, 1.0).unwrap();
        assert_eq!(audit.lhs, 1.0);
        assert_relative_eq!(audit.rhs, 1.0, epsilon = 1e-15);
        assert!(audit.holds);
    }

    #[test]
    fn multiplicative_empty() {
        let audit = audit_multiplicative(&Sample::new(1), &KernelSpec::Linear, 1.0, 1.0).unwrap();
        assert_eq!((audit.lhs, audit.rhs), (0.0, 0.0));
        assert!(audit.holds);
    }

    #[test]
    fn multiplicative_delta_weights_are_half() {
        let s = Sample::from_rows(1, vec![vec![0.0]; 4], vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let audit = audit_multiplicative(&s, &KernelSpec::Delta, 1.0, 1.0).unwrap();
        assert_relative_eq!(audit.lhs, 1.0 + 4.0 + 0.25 + 9.0, epsilon = 1e-14);
        assert_relative_eq!(audit.rhs, 2.0 * audit.detail_value("term_min").unwrap(), epsilon = 1e-14);
        // with d_t = 1 = a every weight is exactly 1/2, so the bound is tight
        assert_relative_eq!(audit.rhs, audit.lhs, epsilon = 1e-12);
        assert!(audit.holds);
    }

    #[test]
    fn multiplicative_hypothesis_violation_names_step() {
        let s = Sample::from_rows(1, vec![vec![0.5], vec![2.0]], vec![0.0, 0.0]).unwrap();
        match audit_multiplicative(&s, &KernelSpec::Linear, 1.0, 1.0) {
            Err(Error::Input(msg)) => assert!(msg.contains("x_2"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn clipped_kernel_d1() {
        let audit = audit_clipped_kernel(&d1(), &KernelSpec::Linear, 1.0, 1.0).unwrap();
        assert_eq!(audit.lhs, 1.0);
        assert_relative_eq!(audit.rhs, 0.5 + 4.0 * 2f64.ln(), epsilon = 1e-14);
        assert!(audit.holds);
    }

    #[test]
    fn clipped_kernel_zero_outcomes() {
        let s = Sample::from_rows(1, vec![vec![1.0], vec![-1.0]], vec![0.0, 0.0]).unwrap();
        let audit = audit_clipped_kernel(&s, &KernelSpec::Rbf { b: 1.0 }, 1.0, 1.0).unwrap();
        assert_eq!(audit.lhs, 0.0);
        assert!(audit.holds);
    }

    #[test]
    fn clipped_kernel_counterexample_prefix() {
        let audit = audit_clipped_kernel(&counterexample(2), &KernelSpec::Linear, 1.0, 1.0).unwrap();
        // γ = 0, 0.5, 0, 0.5
        assert_relative_eq!(audit.lhs, 2.5, epsilon = 1e-14);
        assert!(audit.holds);
    }

    #[test]
    fn clipped_kernel_rejects_outcome_outside_interval() {
        let s = Sample::from_rows(1, vec![vec![1.0]], vec![1.5]).unwrap();
        assert!(matches!(
            audit_clipped_kernel(&s, &KernelSpec::Linear, 1.0, 1.0),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn clipped_linear_d1() {
        let audit = audit_clipped_linear(&d1(), 1.0, 1.0, 1.0).unwrap();
        assert_relative_eq!(audit.rhs, 0.5 + 4.0 * 2f64.ln(), epsilon = 1e-14);
        assert_relative_eq!(audit.detail_value("kernel_rhs").unwrap(), audit.rhs, epsilon = 1e-14);
        assert!(audit.holds);
    }

    #[test]
    fn clipped_linear_zero_signals() {
        let s = Sample::from_rows(2, vec![vec![0.0, 0.0]; 3], vec![0.5, -1.0, 1.0]).unwrap();
        let audit = audit_clipped_linear(&s, 1.0, 1.0, 1.0).unwrap();
        assert_relative_eq!(audit.lhs, 2.25, epsilon = 1e-15);
        assert_relative_eq!(audit.detail_value("term_min").unwrap(), 2.25, epsilon = 1e-15);
        assert!(audit.holds);
    }

    #[test]
    fn clipped_linear_rejects_long_signals() {
        assert!(audit_clipped_linear(&d1(), 1.0, 1.0, 0.5).is_err());
    }

    #[test]
    fn clipped_linear_random_instance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = Sample::new(3);
        for _ in 0..15 {
            let mut x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let r = rng.gen_range(0.0..2.0) / norm;
            x.iter_mut().for_each(|v| *v *= r);
            s.push(x, rng.gen_range(-1.0..1.0)).unwrap();
        }
        let audit = audit_clipped_linear(&s, 0.7, 1.0, 2.0).unwrap();
        assert!(audit.holds);
        assert!(audit.detail_value("kernel_rhs").unwrap() <= audit.rhs);
    }

    #[test]
    fn det_bound_single_column_is_equality() {
        let audit = audit_det_bound(&DMatrix::from_element(1, 1, 1.5), 2.0).unwrap();
        assert_relative_eq!(audit.lhs, 1.0 + 2.25 / 2.0, epsilon = 1e-14);
        assert_relative_eq!(audit.rhs, audit.lhs, epsilon = 1e-14);
        assert!(audit.holds);
    }

    #[test]
    fn det_bound_zero_matrix() {
        let audit = audit_det_bound(&DMatrix::zeros(3, 4), 1.0).unwrap();
        assert_eq!((audit.lhs, audit.rhs), (1.0, 1.0));
        assert!(audit.holds);
    }

    #[test]
    fn det_bound_against_dense_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x = DMatrix::from_fn(4, 10, |_, _| rng.gen_range(-0.75..0.75));
        let audit = audit_det_bound(&x, 2.0).unwrap();
        let dense = shifted(&(x.transpose() * &x / 2.0), 1.0).lu().determinant();
        assert_relative_eq!(audit.lhs, dense, max_relative = 1e-9);
        assert!(audit.holds);
    }

    #[test]
    fn decay_delta_never_crosses() {
        let s = Sample::from_rows(1, vec![vec![0.0]; 30], vec![1.0; 30]).unwrap();
        let diag = decay_diagnostic(&s, &KernelSpec::Delta, 1.0, DEFAULT_EPS_D).unwrap();
        assert!(diag.d_sequence.iter().all(|&d| d == 1.0));
        assert_eq!(diag.threshold_step, None);
        assert_eq!(diag.tail_max, 1.0);
    }

    #[test]
    fn decay_repeated_signal() {
        let s = Sample::from_rows(1, vec![vec![1.0]; 40], vec![0.0; 40]).unwrap();
        let diag = decay_diagnostic(&s, &KernelSpec::Linear, 1.0, 0.045).unwrap();
        assert_relative_eq!(diag.d_sequence[1], 0.5, epsilon = 1e-15);
        assert_relative_eq!(diag.d_sequence[2], 1.0 / 3.0, epsilon = 1e-15);
        // d_t = 1/t drops below 0.045 from t = 23 on
        assert_eq!(diag.threshold_step, Some(23));
    }

    #[test]
    fn decay_rbf_cycling_grid() {
        let grid = [0.0, 0.5, 1.0];
        let rows = (0..60).map(|t| vec![grid[t % 3]]).collect();
        let s = Sample::from_rows(1, rows, vec![0.0; 60]).unwrap();
        let diag = decay_diagnostic(&s, &KernelSpec::Rbf { b: 1.0 }, 1.0, DEFAULT_EPS_D).unwrap();
        assert!(diag.threshold_step.is_some());
        assert!(*diag.d_sequence.last().unwrap() < DEFAULT_EPS_D);
    }

    #[test]
    fn ratio_is_at_least_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let rows = (0..30).map(|_| vec![rng.gen_range(0.0..1.0)]).collect();
        let ys = (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let s = Sample::from_rows(1, rows, ys).unwrap();
        for p in asymptotic_ratio(&s, &KernelSpec::Rbf { b: 1.0 }, 0.5).unwrap() {
            assert!(p.ratio >= 1.0 - 1e-10, "{p:?}");
        }
    }

    #[test]
    fn ratio_counterexample_at_even_steps() {
        let ratios = asymptotic_ratio(&counterexample(10), &KernelSpec::Linear, 1.0).unwrap();
        let term_min_direct = term_min(&counterexample(3), &KernelSpec::Linear, 1.0).unwrap();
        let p6 = ratios.iter().find(|p| p.t == 6).unwrap();
        assert_relative_eq!(p6.term_min, term_min_direct, max_relative = 1e-12);
    }
}
