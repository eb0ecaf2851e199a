//! Bayesian merging over the pool of Gaussian linear experts.
//!
//! Expert `θ ∈ ℝⁿ` predicts the density `N(θᵀx_t, σ²)`; the prior over the
//! pool is `N(0, I)`. The pool is never materialized: the posterior after
//! `t` steps is Gaussian with mean `A_t⁻¹X_tY_t` and covariance `σ²A_t⁻¹`,
//! where `A_t = X_tX_tᵀ + σ²I`. Quadrature over the pool is kept only as an
//! independent check for `n ≤ 2`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::identity::{closed_term, relative_from_log_ratio, IdentityCertificate};
use crate::kernels::Signal;
use crate::pdlinalg::{cholesky, shifted};
use crate::regression::{check_ridge, fit_primal, Sample};

/// Half-width of the quadrature box `[−8, 8]ⁿ` over the expert pool.
pub const QUADRATURE_HALF_WIDTH: f64 = 8.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GaussianPrediction {
    pub mean: f64,
    pub variance: f64,
}

impl GaussianPrediction {
    /// `−ln N(y; mean, variance)`
    pub fn neg_log_density(&self, y: f64) -> f64 {
        0.5 * (2.0 * PI * self.variance).ln() + (y - self.mean).powi(2) / (2.0 * self.variance)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MergeState {
    pub step: usize,
    pub cumulative_loss: f64,
    pub posterior_mean: DVector<f64>,
    pub posterior_cov: DMatrix<f64>,
    sigma2: f64,
    /// `A_t = Σ x xᵀ + σ²I`
    precision: DMatrix<f64>,
    /// `Σ x y`
    moment: DVector<f64>,
}

impl MergeState {
    /// The prior `N(0, I)` over `ℝⁿ`.
    pub fn prior(n: usize, sigma2: f64) -> Result<Self> {
        check_ridge(sigma2)?;
        Ok(MergeState {
            step: 0,
            cumulative_loss: 0.0,
            posterior_mean: DVector::zeros(n),
            posterior_cov: DMatrix::identity(n, n),
            sigma2,
            precision: DMatrix::identity(n, n) * sigma2,
            moment: DVector::zeros(n),
        })
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn dim(&self) -> usize {
        self.posterior_mean.len()
    }

    fn check(&self, x: &Signal, sigma2: f64) -> Result<()> {
        if sigma2 != self.sigma2 {
            return Err(Error::input(format!(
                "σ² = {sigma2} differs from the run's σ² = {}",
                self.sigma2
            )));
        }
        if x.dim() != self.dim() {
            return Err(Error::input(format!(
                "signal dimension {} != pool dimension {}",
                x.dim(),
                self.dim()
            )));
        }
        Ok(())
    }
}

/// The mixture density for the next outcome: `N(θ̄ᵀx, xᵀΣx + σ²)`.
pub fn merge_predict(state: &MergeState, x: &Signal, sigma2: f64) -> Result<GaussianPrediction> {
    state.check(x, sigma2)?;
    let xv = DVector::from_column_slice(x.coords());
    Ok(GaussianPrediction {
        mean: state.posterior_mean.dot(&xv),
        variance: xv.dot(&(&state.posterior_cov * &xv)) + sigma2,
    })
}

/// Reveals `y`: charges the learner `−ln ξ_t(y)` and moves to the posterior.
pub fn merge_update(state: &MergeState, x: &Signal, y: f64, sigma2: f64) -> Result<MergeState> {
    let prediction = merge_predict(state, x, sigma2)?;
    let xv = DVector::from_column_slice(x.coords());
    let precision = &state.precision + &xv * xv.transpose();
    let moment = &state.moment + &xv * y;
    let factor = cholesky(&precision)?;
    Ok(MergeState {
        step: state.step + 1,
        cumulative_loss: state.cumulative_loss + prediction.neg_log_density(y),
        posterior_mean: factor.solve(&moment)?,
        posterior_cov: factor.inverse() * sigma2,
        sigma2,
        precision,
        moment,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MergeStep {
    pub t: usize,
    pub prediction: GaussianPrediction,
    pub outcome: f64,
    pub loss: f64,
}

#[derive(Clone, Debug)]
pub struct MergeRun {
    pub steps: Vec<MergeStep>,
    pub final_state: MergeState,
}

impl MergeRun {
    /// `Σ (γ_t − y_t)²/(2σ_t²) + Σ ½ ln(2πσ_t²)`
    pub fn decomposed_loss(&self) -> f64 {
        let quad: f64 = self
            .steps
            .iter()
            .map(|s| (s.prediction.mean - s.outcome).powi(2) / (2.0 * s.prediction.variance))
            .sum();
        let logs: f64 = self
            .steps
            .iter()
            .map(|s| 0.5 * (2.0 * PI * s.prediction.variance).ln())
            .sum();
        quad + logs
    }
}

pub fn run_merging(sample: &Sample, sigma2: f64) -> Result<MergeRun> {
    let mut state = MergeState::prior(sample.dimension(), sigma2)?;
    let mut steps = Vec::with_capacity(sample.len());
    for (t, e) in sample.examples().iter().enumerate() {
        let prediction = merge_predict(&state, &e.signal, sigma2)?;
        let next = merge_update(&state, &e.signal, e.outcome, sigma2)?;
        steps.push(MergeStep {
            t: t + 1,
            prediction,
            outcome: e.outcome,
            loss: next.cumulative_loss - state.cumulative_loss,
        });
        state = next;
    }
    Ok(MergeRun {
        steps,
        final_state: state,
    })
}

/// Trapezoid weights and nodes on `[lo, hi]`.
fn trapezoid(lo: f64, hi: f64, n_grid: usize) -> Vec<(f64, f64)> {
    let h = (hi - lo) / (n_grid - 1) as f64;
    (0..n_grid)
        .map(|i| {
            let w = if i == 0 || i == n_grid - 1 { 0.5 * h } else { h };
            (lo + i as f64 * h, w)
        })
        .collect()
}

/// `ln ∫ exp(f(θ)) dθ` over a tensor trapezoid grid, with log-sum-exp scaling.
fn log_integral(axes: &[Vec<(f64, f64)>], log_f: impl Fn(&[f64]) -> f64) -> f64 {
    let mut terms: Vec<(f64, f64)> = Vec::new();
    match axes {
        [ax] => {
            for &(u, w) in ax {
                terms.push((log_f(&[u]), w));
            }
        }
        [ax, ay] => {
            for &(u, wu) in ax {
                for &(v, wv) in ay {
                    terms.push((log_f(&[u, v]), wu * wv));
                }
            }
        }
        _ => unreachable!("quadrature is limited to one or two dimensions"),
    }
    let peak = terms.iter().map(|t| t.0).fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = terms.iter().map(|(l, w)| w * (l - peak).exp()).sum();
    peak + sum.ln()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LossAverageCheck {
    /// Cumulative loss accumulated by `merge_update`.
    pub lhs: f64,
    /// `−ln ∫ exp(−Loss_T(θ)) P₀(dθ)` by quadrature.
    pub rhs: f64,
}

impl LossAverageCheck {
    pub fn residual(&self) -> f64 {
        (self.lhs - self.rhs).abs()
    }
}

/// Compares the learner's cumulative loss with the generalized average of
/// the experts' cumulative losses under the prior. Only `n ≤ 2`.
pub fn check_loss_average(sample: &Sample, sigma2: f64, n_grid: usize) -> Result<LossAverageCheck> {
    let n = sample.dimension();
    if n == 0 || n > 2 {
        return Err(Error::Unsupported(format!(
            "quadrature check needs dimension 1 or 2, got {n}"
        )));
    }
    if n_grid < 3 {
        return Err(Error::input("n_grid must be at least 3"));
    }
    let lhs = run_merging(sample, sigma2)?.final_state.cumulative_loss;
    if sample.is_empty() {
        return Ok(LossAverageCheck { lhs, rhs: 0.0 });
    }

    let axis = trapezoid(-QUADRATURE_HALF_WIDTH, QUADRATURE_HALF_WIDTH, n_grid);
    let axes = vec![axis; n];
    let log_norm_noise = 0.5 * (2.0 * PI * sigma2).ln();
    let log_norm_prior = 0.5 * n as f64 * (2.0 * PI).ln();
    let log_integrand = |theta: &[f64]| {
        let mut expert_loss = 0.0;
        for e in sample.examples() {
            let pred: f64 = theta.iter().zip(e.signal.coords()).map(|(a, b)| a * b).sum();
            expert_loss += log_norm_noise + (pred - e.outcome).powi(2) / (2.0 * sigma2);
        }
        let prior = -0.5 * theta.iter().map(|v| v * v).sum::<f64>() - log_norm_prior;
        prior - expert_loss
    };
    let rhs = -log_integral(&axes, log_integrand);
    Ok(LossAverageCheck { lhs, rhs })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GaussianIntegralCheck {
    pub closed: f64,
    pub quad: f64,
}

impl GaussianIntegralCheck {
    pub fn relative_residual(&self) -> f64 {
        (self.closed - self.quad).abs() / self.closed.abs()
    }
}

/// `∫ exp(−θᵀAθ − θᵀb − c) dθ` in closed form, `e^{−Q(θ₀)} π^{n/2} / √det A`,
/// and by trapezoid quadrature on a box around the minimizer wide enough
/// that the integrand falls below `e^{−64}` of its peak at the edges.
pub fn check_gaussian_integral(
    a_mat: &DMatrix<f64>,
    b: &DVector<f64>,
    c: f64,
    n_grid: usize,
) -> Result<GaussianIntegralCheck> {
    let n = a_mat.nrows();
    if n == 0 || n > 2 {
        return Err(Error::Unsupported(format!(
            "quadrature check needs dimension 1 or 2, got {n}"
        )));
    }
    if b.len() != n {
        return Err(Error::input("linear term has the wrong length"));
    }
    if n_grid < 3 {
        return Err(Error::input("n_grid must be at least 3"));
    }
    let factor = cholesky(a_mat)?;
    let quad_form = |theta: &DVector<f64>| theta.dot(&(a_mat * theta)) + theta.dot(b) + c;
    // θ₀ = −A⁻¹b / 2
    let theta0 = factor.solve(b)? * -0.5;
    let closed = (-quad_form(&theta0)).exp() * PI.powf(n as f64 / 2.0) / (0.5 * factor.logdet()).exp();

    let lambda_min = a_mat.clone().symmetric_eigenvalues().min();
    let half = 8.0 / lambda_min.sqrt();
    let axes: Vec<_> = (0..n)
        .map(|i| trapezoid(theta0[i] - half, theta0[i] + half, n_grid))
        .collect();
    let log_q = log_integral(&axes, |theta| -quad_form(&DVector::from_column_slice(theta)));
    Ok(GaussianIntegralCheck {
        closed,
        quad: log_q.exp(),
    })
}

/// Online linear ridge regression in primal form, returning
/// `(γ_t, x_tᵀA_{t−1}⁻¹x_t)` for each step, with `A_{t−1} = X_{t−1}X_{t−1}ᵀ + aI`.
pub fn online_primal(sample: &Sample, a: f64) -> Result<Vec<(f64, f64)>> {
    check_ridge(a)?;
    let n = sample.dimension();
    let mut precision = DMatrix::identity(n, n) * a;
    let mut moment = DVector::zeros(n);
    let mut out = Vec::with_capacity(sample.len());
    for e in sample.examples() {
        let x = DVector::from_column_slice(e.signal.coords());
        let factor = cholesky(&precision)?;
        let theta = factor.solve(&moment)?;
        out.push((theta.dot(&x), factor.quad_form(&x)?));
        precision += &x * x.transpose();
        moment += &x * e.outcome;
    }
    Ok(out)
}

/// The loss identity for linear ridge regression with `a = σ²`, computed
/// entirely in primal form:
///
/// `Σ (γ_t − y_t)² / (1 + x_tᵀA_{t−1}⁻¹x_t) = min_θ(…) = a Yᵀ(XᵀX + aI)⁻¹Y`.
///
/// The Frobenius residual compares `Π(1 + x_tᵀA_{t−1}⁻¹x_t)` with `det(A_T/a)`.
pub fn verify_linear_identity(sample: &Sample, sigma2: f64) -> Result<IdentityCertificate> {
    let a = sigma2;
    check_ridge(a)?;
    let tol = crate::identity::DEFAULT_TOL;
    if sample.is_empty() {
        return IdentityCertificate::from_parts(0.0, 0.0, 0.0, 0.0, Vec::new(), 1.0, tol);
    }
    let online = online_primal(sample, a)?;
    let term_online: f64 = sample
        .examples()
        .iter()
        .zip(&online)
        .map(|(e, (gamma, q))| (gamma - e.outcome).powi(2) / (1.0 + q))
        .sum();
    let term_min = fit_primal(sample, a)?.objective(sample)?;

    let x = sample.design_matrix();
    let xtx = x.transpose() * &x;
    let term_closed = closed_term(&xtx, &sample.outcomes(), a)?;

    let n = sample.dimension();
    let log_det_a = cholesky(&shifted(&(&x * x.transpose()), a))?.logdet() - n as f64 * a.ln();
    let log_pivots: f64 = online.iter().map(|(_, q)| q.ln_1p()).sum();
    let frobenius_residual = relative_from_log_ratio(log_pivots - log_det_a);
    let factors = online.iter().map(|(_, q)| 1.0 + q).collect();
    let condition = cholesky(&shifted(&xtx, a))?.condition_estimate();

    IdentityCertificate::from_parts(
        term_online,
        term_min,
        term_closed,
        frobenius_residual,
        factors,
        condition,
        tol,
    )
}
