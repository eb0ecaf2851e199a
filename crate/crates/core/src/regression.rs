//! Batch and online kernel ridge regression, and the primal linear form.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::{cross_vector, eval_kernel, gram, KernelSpec, Signal};
use crate::pdlinalg::{cholesky, shifted, CholFactor};

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub signal: Signal,
    pub outcome: f64,
}

/// An ordered sequence of labelled examples with a common signal dimension.
///
/// Examples built through [`Sample::push`] or [`Sample::from_rows`] get ids
/// `1, 2, …` in order. Ids must be distinct within a sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    examples: Vec<Example>,
    dimension: usize,
}

impl Sample {
    pub fn new(dimension: usize) -> Self {
        Sample {
            examples: Vec::new(),
            dimension,
        }
    }

    pub fn from_rows(dimension: usize, rows: Vec<Vec<f64>>, outcomes: Vec<f64>) -> Result<Self> {
        if rows.len() != outcomes.len() {
            return Err(Error::input(format!(
                "{} signals but {} outcomes",
                rows.len(),
                outcomes.len()
            )));
        }
        let mut sample = Sample::new(dimension);
        for (coords, y) in rows.into_iter().zip(outcomes) {
            sample.push(coords, y)?;
        }
        Ok(sample)
    }

    /// Builds a sample from examples that already carry ids.
    pub fn from_examples(dimension: usize, examples: Vec<Example>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (t, e) in examples.iter().enumerate() {
            if e.signal.dim() != dimension {
                return Err(Error::input(format!(
                    "example {} has dimension {}, expected {dimension}",
                    t + 1,
                    e.signal.dim()
                )));
            }
            if !e.outcome.is_finite() {
                return Err(Error::input(format!("outcome of example {} is not finite", t + 1)));
            }
            if !seen.insert(e.signal.id()) {
                return Err(Error::input(format!("duplicate signal id {}", e.signal.id())));
            }
        }
        Ok(Sample { examples, dimension })
    }

    /// Appends an example with the next ordinal id.
    pub fn push(&mut self, coords: Vec<f64>, outcome: f64) -> Result<()> {
        let t = self.examples.len() + 1;
        if coords.len() != self.dimension {
            return Err(Error::input(format!(
                "example {t} has dimension {}, expected {}",
                coords.len(),
                self.dimension
            )));
        }
        if !outcome.is_finite() {
            return Err(Error::input(format!("outcome of example {t} is not finite")));
        }
        let id = self.examples.last().map_or(0, |e| e.signal.id()) + 1;
        let signal = Signal::new(coords, id)?;
        self.examples.push(Example { signal, outcome });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn signals(&self) -> Vec<Signal> {
        self.examples.iter().map(|e| e.signal.clone()).collect()
    }

    pub fn outcomes(&self) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.examples.iter().map(|e| e.outcome))
    }

    /// The first `t` examples.
    pub fn prefix(&self, t: usize) -> Sample {
        Sample {
            examples: self.examples[..t.min(self.len())].to_vec(),
            dimension: self.dimension,
        }
    }

    /// The `n × T` matrix whose columns are the signals.
    pub fn design_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dimension, self.len(), |i, t| {
            self.examples[t].signal.coords()[i]
        })
    }

    pub fn max_abs_outcome(&self) -> f64 {
        self.examples.iter().map(|e| e.outcome.abs()).fold(0.0, f64::max)
    }
}

pub(crate) fn check_ridge(a: f64) -> Result<()> {
    if a.is_finite() && a > 0.0 {
        Ok(())
    } else {
        Err(Error::input(format!("ridge parameter must be positive, got {a}")))
    }
}

/// A kernel expansion `f(x) = Σ c_i K(x_i, x)`.
#[derive(Clone, Debug)]
pub struct BatchModel {
    coeffs: DVector<f64>,
    spec: KernelSpec,
    ridge: f64,
    train_signals: Vec<Signal>,
}

impl BatchModel {
    pub fn coeffs(&self) -> &DVector<f64> {
        &self.coeffs
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn train_signals(&self) -> &[Signal] {
        &self.train_signals
    }

    /// Same expansion points, different coefficients.
    pub fn with_coeffs(&self, coeffs: DVector<f64>) -> Result<BatchModel> {
        if coeffs.len() != self.train_signals.len() {
            return Err(Error::input(format!(
                "{} coefficients for {} expansion points",
                coeffs.len(),
                self.train_signals.len()
            )));
        }
        Ok(BatchModel {
            coeffs,
            ..self.clone()
        })
    }

    /// An arbitrary expansion over `signals`; not necessarily a ridge fit.
    pub fn expansion(spec: &KernelSpec, ridge: f64, signals: Vec<Signal>, coeffs: DVector<f64>) -> Result<BatchModel> {
        if coeffs.len() != signals.len() {
            return Err(Error::input("coefficient count differs from expansion points"));
        }
        spec.validate()?;
        Ok(BatchModel {
            coeffs,
            spec: spec.clone(),
            ridge,
            train_signals: signals,
        })
    }

    pub fn predict(&self, x: &Signal) -> Result<f64> {
        if self.train_signals.is_empty() {
            return Ok(0.0);
        }
        Ok(self.coeffs.dot(&cross_vector(&self.spec, &self.train_signals, x)?))
    }

    /// RKHS norm squared, `cᵀKc`.
    pub fn norm_squared(&self) -> Result<f64> {
        let k = gram(&self.spec, &self.train_signals)?.into_entries();
        Ok(self.coeffs.dot(&(k * &self.coeffs)))
    }
}

/// Kernel ridge regression on the whole sample: `c = (K + aI)⁻¹ Y`.
pub fn fit_batch(sample: &Sample, spec: &KernelSpec, a: f64) -> Result<BatchModel> {
    check_ridge(a)?;
    spec.validate()?;
    let signals = sample.signals();
    let coeffs = if signals.is_empty() {
        DVector::zeros(0)
    } else {
        let k = gram(spec, &signals)?.into_entries();
        cholesky(&shifted(&k, a))?.solve(&sample.outcomes())?
    };
    Ok(BatchModel {
        coeffs,
        spec: spec.clone(),
        ridge: a,
        train_signals: signals,
    })
}

pub fn predict(model: &BatchModel, x: &Signal) -> Result<f64> {
    model.predict(x)
}

/// `Σ (f(x_t) − y_t)² + a‖f‖²` for any kernel expansion `f`.
pub fn objective(sample: &Sample, a: f64, f: &BatchModel) -> Result<f64> {
    let mut sq = 0.0;
    for e in sample.examples() {
        let r = f.predict(&e.signal)? - e.outcome;
        sq += r * r;
    }
    Ok(sq + a * f.norm_squared()?)
}

/// The regularized square loss of `f`, whose expansion points must be the
/// sample's own signals.
pub fn regularized_loss(sample: &Sample, spec: &KernelSpec, a: f64, f: &BatchModel) -> Result<f64> {
    if f.spec() != spec {
        return Err(Error::input(format!(
            "model kernel {} differs from {}",
            f.spec(),
            spec
        )));
    }
    let matches = f.train_signals.len() == sample.len()
        && f.train_signals
            .iter()
            .zip(sample.examples())
            .all(|(s, e)| *s == e.signal);
    if !matches {
        return Err(Error::input("model was not trained on this sample's signals"));
    }
    objective(sample, a, f)
}

/// One step of the online protocol.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OnlineStep {
    /// 1-based step index.
    pub t: usize,
    pub outcome: f64,
    pub gamma: f64,
    pub d: f64,
    pub gamma_clipped: Option<f64>,
    pub sq_loss: f64,
    pub sq_loss_clipped: Option<f64>,
    /// `(γ_t − y_t)² / (1 + d_t/a)`
    pub weighted_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OnlineTrace {
    pub ridge: f64,
    pub clip: Option<f64>,
    pub steps: Vec<OnlineStep>,
}

impl OnlineTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn gammas(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.gamma).collect()
    }

    pub fn variances(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.d).collect()
    }

    pub fn total_sq_loss(&self) -> f64 {
        self.steps.iter().fold(0.0, |acc, s| acc + s.sq_loss)
    }

    pub fn total_weighted_loss(&self) -> f64 {
        self.steps.iter().fold(0.0, |acc, s| acc + s.weighted_loss)
    }

    pub fn total_clipped_loss(&self) -> Option<f64> {
        self.clip
            .map(|_| self.steps.iter().fold(0.0, |acc, s| acc + s.sq_loss_clipped.unwrap_or(0.0)))
    }

    /// `Σ ln(1 + d_t/a)`, the log of the product of the normalized pivots.
    pub fn log_pivot_product(&self) -> f64 {
        self.steps.iter().fold(0.0, |acc, s| acc + (s.d / self.ridge).ln_1p())
    }
}

/// Relative tolerance below zero within which a computed `d_t` is treated
/// as rounding and clamped.
pub const D_CLAMP_TOL: f64 = 1e-12;

/// Online ridge regression: at step `t` predicts with the model fitted on
/// examples `1..t−1`, then reveals `y_t`.
///
/// One growing Cholesky factor of `K_{t−1} + aI` serves all steps; with
/// `w = L⁻¹k` and `z = L⁻¹Y` the prediction is `w·z` and the new pivot is
/// `a + d_t`.
pub fn run_online(sample: &Sample, spec: &KernelSpec, a: f64, clip: Option<f64>) -> Result<OnlineTrace> {
    check_ridge(a)?;
    spec.validate()?;
    if let Some(c) = clip {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::input(format!("clip bound must be positive, got {c}")));
        }
    }
    let signals = sample.signals();
    let mut factor = CholFactor::empty().with_regularizer(a);
    let mut z: Vec<f64> = Vec::with_capacity(signals.len());
    let mut steps = Vec::with_capacity(signals.len());

    for (t, example) in sample.examples().iter().enumerate() {
        let x = &example.signal;
        let y = example.outcome;
        let kxx = eval_kernel(spec, x, x)?;
        let k = cross_vector(spec, &signals[..t], x)?;
        let w = factor.forward_solve(&k)?;
        // fold from +0.0: an empty `sum` gives −0.0
        let gamma = w.iter().zip(&z).fold(0.0, |acc, (wi, zi)| acc + wi * zi);
        let explained = w.norm_squared();

        let mut d = kxx - explained;
        if d < 0.0 {
            if d >= -D_CLAMP_TOL * kxx.max(explained) {
                d = 0.0;
            } else {
                return Err(Error::NumericalConsistency(format!(
                    "d_{} = {d:e} is negative (K(x,x) = {kxx:e})",
                    t + 1
                )));
            }
        }

        let pivot = factor.push_row(&w, kxx + a)?;
        debug_assert!(((pivot - a) - d).abs() <= 1e-9 * (a + kxx));
        z.push((y - gamma) / pivot.sqrt());

        let sq_loss = (gamma - y).powi(2);
        let gamma_clipped = clip.map(|c| gamma.clamp(-c, c));
        steps.push(OnlineStep {
            t: t + 1,
            outcome: y,
            gamma,
            d,
            gamma_clipped,
            sq_loss,
            sq_loss_clipped: gamma_clipped.map(|g| (g - y).powi(2)),
            weighted_loss: sq_loss / (1.0 + d / a),
        });
    }
    Ok(OnlineTrace { ridge: a, clip, steps })
}

/// Linear ridge regression in primal form.
#[derive(Clone, Debug)]
pub struct PrimalModel {
    pub theta: DVector<f64>,
    pub ridge: f64,
}

impl PrimalModel {
    pub fn predict(&self, x: &Signal) -> Result<f64> {
        if x.dim() != self.theta.len() {
            return Err(Error::input(format!(
                "signal dimension {} != model dimension {}",
                x.dim(),
                self.theta.len()
            )));
        }
        Ok(x.coords().iter().zip(self.theta.iter()).fold(0.0, |acc, (u, v)| acc + u * v))
    }

    /// `Σ (θᵀx_t − y_t)² + a‖θ‖²`
    pub fn objective(&self, sample: &Sample) -> Result<f64> {
        let mut sq = 0.0;
        for e in sample.examples() {
            sq += (self.predict(&e.signal)? - e.outcome).powi(2);
        }
        Ok(sq + self.ridge * self.theta.norm_squared())
    }
}

/// `θ = (XXᵀ + aI)⁻¹ X Y`
pub fn fit_primal(sample: &Sample, a: f64) -> Result<PrimalModel> {
    check_ridge(a)?;
    let n = sample.dimension();
    if sample.is_empty() {
        return Ok(PrimalModel {
            theta: DVector::zeros(n),
            ridge: a,
        });
    }
    let x = sample.design_matrix();
    let gram_primal = shifted(&(&x * x.transpose()), a);
    let theta = cholesky(&gram_primal)?.solve(&(&x * sample.outcomes()))?;
    Ok(PrimalModel { theta, ridge: a })
}
