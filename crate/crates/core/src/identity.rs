//! Certification of the online/batch square-loss identity
//!
//! ```text
//! Σ (γ_t − y_t)² / (1 + d_t/a)  =  min_f ( Σ (f(x_t) − y_t)² + a‖f‖² )  =  a Yᵀ(K + aI)⁻¹Y
//! ```
//!
//! Each of the three terms is computed by its own route: the online trace,
//! an explicit batch fit evaluated on the regularized objective, and a
//! single dense Cholesky solve.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::{gram, KernelSpec};
use crate::pdlinalg::{cholesky, shifted, spectral_weights};
use crate::regression::{check_ridge, fit_batch, regularized_loss, run_online, Sample};

pub const DEFAULT_TOL: f64 = 1e-8;
/// Tolerance used instead of the requested one when `K + aI` is badly conditioned.
pub const ILL_CONDITIONED_TOL: f64 = 1e-6;
pub const ILL_CONDITIONED_THRESHOLD: f64 = 1e10;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IdentityCertificate {
    /// `Σ (γ_t − y_t)² / (1 + d_t/a)`
    pub term_online: f64,
    /// Regularized loss of the batch optimum.
    pub term_min: f64,
    /// `a Yᵀ(K + aI)⁻¹Y`
    pub term_closed: f64,
    pub residual_pairwise: f64,
    /// `|Π(1 + d_t/a) / det(I + K/a) − 1|`
    pub frobenius_residual: f64,
    /// The normalized pivots `1 + d_t/a`.
    pub frobenius_factors: Vec<f64>,
    pub scale: f64,
    pub condition_estimate: f64,
    /// Relative tolerance actually applied.
    pub tolerance: f64,
}

impl IdentityCertificate {
    fn from_terms(
        term_online: f64,
        term_min: f64,
        term_closed: f64,
        frobenius_residual: f64,
        frobenius_factors: Vec<f64>,
        condition_estimate: f64,
        tol: f64,
    ) -> Self {
        let residual_pairwise = (term_online - term_min)
            .abs()
            .max((term_online - term_closed).abs())
            .max((term_min - term_closed).abs());
        let tolerance = if condition_estimate > ILL_CONDITIONED_THRESHOLD {
            tol.max(ILL_CONDITIONED_TOL)
        } else {
            tol
        };
        IdentityCertificate {
            term_online,
            term_min,
            term_closed,
            residual_pairwise,
            frobenius_residual,
            frobenius_factors,
            scale: term_closed.abs().max(1.0),
            condition_estimate,
            tolerance,
        }
    }

    pub fn holds(&self) -> bool {
        let finite = [self.term_online, self.term_min, self.term_closed]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0);
        finite && self.residual_pairwise <= self.tolerance * self.scale
    }

    pub(crate) fn from_parts(
        term_online: f64,
        term_min: f64,
        term_closed: f64,
        frobenius_residual: f64,
        frobenius_factors: Vec<f64>,
        condition_estimate: f64,
        tol: f64,
    ) -> Result<Self> {
        Self::from_terms(
            term_online,
            term_min,
            term_closed,
            frobenius_residual,
            frobenius_factors,
            condition_estimate,
            tol,
        )
        .into_result()
    }

    pub(crate) fn into_result(self) -> Result<Self> {
        if self.holds() {
            Ok(self)
        } else {
            Err(Error::IdentityViolated(Box::new(self)))
        }
    }

    /// Largest relative difference between corresponding terms of two certificates.
    pub fn max_term_difference(&self, other: &IdentityCertificate) -> f64 {
        let scale = self.scale.max(other.scale);
        [
            (self.term_online - other.term_online).abs(),
            (self.term_min - other.term_min).abs(),
            (self.term_closed - other.term_closed).abs(),
        ]
        .into_iter()
        .fold(0.0, f64::max)
            / scale
    }
}

/// `|exp(x) − 1|` for a log-ratio `x`, without overflow for large determinants.
pub(crate) fn relative_from_log_ratio(log_ratio: f64) -> f64 {
    log_ratio.exp_m1().abs()
}

/// Computes the three terms independently and checks they agree to
/// `tol · max(1, term_closed)`.
///
/// On disagreement the certificate is returned inside
/// [`Error::IdentityViolated`].
pub fn certify(sample: &Sample, spec: &KernelSpec, a: f64, tol: f64) -> Result<IdentityCertificate> {
    check_ridge(a)?;
    if !(tol > 0.0) {
        return Err(Error::input(format!("tolerance must be positive, got {tol}")));
    }
    if sample.is_empty() {
        return IdentityCertificate::from_terms(0.0, 0.0, 0.0, 0.0, Vec::new(), 1.0, tol).into_result();
    }

    let trace = run_online(sample, spec, a, None)?;
    let term_online = trace.total_weighted_loss();

    let model = fit_batch(sample, spec, a)?;
    let term_min = regularized_loss(sample, spec, a, &model)?;

    let k = gram(spec, &sample.signals())?.into_entries();
    let factor = cholesky(&shifted(&k, a))?;
    let y = sample.outcomes();
    let term_closed = a * y.dot(&factor.solve(&y)?);

    // Π(1 + d_t/a) against det(I + K/a) = det(K + aI) / a^T
    let log_det_normalized = factor.logdet() - sample.len() as f64 * a.ln();
    let frobenius_residual = relative_from_log_ratio(trace.log_pivot_product() - log_det_normalized);
    let factors = trace.steps.iter().map(|s| 1.0 + s.d / a).collect();

    IdentityCertificate::from_terms(
        term_online,
        term_min,
        term_closed,
        frobenius_residual,
        factors,
        factor.condition_estimate(),
        tol,
    )
    .into_result()
}

/// `a Yᵀ(K + aI)⁻¹Y` by a single Cholesky solve.
pub fn closed_term(k: &DMatrix<f64>, y: &DVector<f64>, a: f64) -> Result<f64> {
    check_ridge(a)?;
    if y.is_empty() {
        return Ok(0.0);
    }
    Ok(a * cholesky(&shifted(k, a))?.quad_form(y)?)
}

pub fn default_sweep() -> Vec<f64> {
    (0..=8).map(|e| 10f64.powi(-e)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ZeroRidgeRow {
    pub a: f64,
    /// `a Yᵀ(K + aI)⁻¹Y` evaluated in the eigenbasis of `K`.
    pub term_closed: f64,
    /// The same quantity by a Cholesky solve; loses about `ε λ_max / a`
    /// relative accuracy as `a` shrinks.
    pub term_cholesky: f64,
    /// `|term_closed − limit|`
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ZeroRidgeStudy {
    pub rows: Vec<ZeroRidgeRow>,
    /// Squared norm of the projection of `Y` onto the null space of `K`.
    pub limit: f64,
    pub rank: usize,
    pub scale: f64,
    /// Gaps never increase along the sweep (up to `1e-12 · scale`).
    pub monotone: bool,
}

impl ZeroRidgeStudy {
    pub fn final_gap(&self) -> Option<f64> {
        self.rows.last().map(|r| r.gap)
    }
}

/// Tracks `a Yᵀ(K + aI)⁻¹Y` along a decreasing sweep of `a` and compares it
/// with the null-space projection obtained from an eigendecomposition.
pub fn zero_ridge_study(sample: &Sample, spec: &KernelSpec, a_sweep: &[f64]) -> Result<ZeroRidgeStudy> {
    if a_sweep.is_empty() {
        return Err(Error::input("empty ridge sweep"));
    }
    for w in a_sweep.windows(2) {
        if !(w[1] < w[0]) {
            return Err(Error::input("ridge sweep must be strictly decreasing"));
        }
    }
    for &a in a_sweep {
        check_ridge(a)?;
    }
    let k = gram(spec, &sample.signals())?.into_entries();
    let y = sample.outcomes();
    // with the null-space eigenvalues snapped to zero the gap is exactly the
    // range-space part, free of the ε/a blow-up of a direct solve
    let weights = spectral_weights(&k, &y, None)?;
    let limit = weights.iter().filter(|(l, _)| *l == 0.0).fold(0.0, |acc, (_, w)| acc + w);
    let rank = weights.iter().filter(|(l, _)| *l > 0.0).count();

    let mut rows = Vec::with_capacity(a_sweep.len());
    for &a in a_sweep {
        let range_part = weights
            .iter()
            .filter(|(l, _)| *l > 0.0)
            .fold(0.0, |acc, (l, w)| acc + a * w / (l + a));
        rows.push(ZeroRidgeRow {
            a,
            term_closed: limit + range_part,
            term_cholesky: closed_term(&k, &y, a)?,
            gap: range_part,
        });
    }
    let scale = y.norm_squared().max(1.0);
    let monotone = rows.windows(2).all(|w| w[1].gap <= w[0].gap + 1e-12 * scale);
    Ok(ZeroRidgeStudy {
        rows,
        limit,
        rank,
        scale,
        monotone,
    })
}
