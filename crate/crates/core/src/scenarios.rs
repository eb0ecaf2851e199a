//! Constructed sample sequences: the non-compact `l2` counterexample, samples
//! with a kernel-orthogonal block, and cycling grids on a compact interval.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::regression::{check_ridge, OnlineTrace, Sample};

#[derive(Clone, Debug, PartialEq)]
pub enum ScenarioKind {
    /// `x_{2i−1} = x_{2i} = e_i`, `y_{2i−1} = 1`, `y_{2i} = 0`, truncated to
    /// dimension `half_pairs`.
    CounterexampleL2 { half_pairs: usize },
    /// Signals cycling through `grid` with outcomes
    /// `sin(2πx) ± 0.5`, the sign alternating with `t`.
    CompactRbf { t: usize, grid: Vec<f64> },
    /// `core` padded with zeros, plus `ortho_count` examples supported on
    /// fresh coordinates, inserted at seeded positions.
    OrthogonalDrop { core: Sample, ortho_count: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn counterexample(half_pairs: usize) -> Self {
        ScenarioSpec {
            kind: ScenarioKind::CounterexampleL2 { half_pairs },
            seed: 0,
        }
    }

    pub fn compact_rbf(t: usize) -> Self {
        ScenarioSpec {
            kind: ScenarioKind::CompactRbf {
                t,
                grid: default_grid(),
            },
            seed: 0,
        }
    }

    pub fn orthogonal_drop(core: Sample, ortho_count: usize, seed: u64) -> Self {
        ScenarioSpec {
            kind: ScenarioKind::OrthogonalDrop { core, ortho_count },
            seed,
        }
    }
}

/// Eleven evenly spaced points on `[0, 1]`. An odd count makes every grid
/// point see both noise signs.
pub fn default_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

pub fn generate(spec: &ScenarioSpec) -> Result<Sample> {
    match &spec.kind {
        ScenarioKind::CounterexampleL2 { half_pairs } => {
            let k = *half_pairs;
            if k == 0 {
                return Err(Error::input("counterexample needs at least one pair"));
            }
            let mut sample = Sample::new(k);
            for i in 0..k {
                let mut e = vec![0.0; k];
                e[i] = 1.0;
                sample.push(e.clone(), 1.0)?;
                sample.push(e, 0.0)?;
            }
            Ok(sample)
        }
        ScenarioKind::CompactRbf { t, grid } => {
            if *t == 0 || grid.is_empty() {
                return Err(Error::input("compact-rbf needs T > 0 and a non-empty grid"));
            }
            let mut sample = Sample::new(1);
            for step in 1..=*t {
                let x = grid[(step - 1) % grid.len()];
                let sign = if (step as u64 + spec.seed).is_multiple_of(2) { 1.0 } else { -1.0 };
                sample.push(vec![x], (2.0 * PI * x).sin() + 0.5 * sign)?;
            }
            Ok(sample)
        }
        ScenarioKind::OrthogonalDrop { core, ortho_count } => {
            if *ortho_count == 0 {
                return Err(Error::input("ortho-drop needs a positive count"));
            }
            let m = core.dimension();
            let dim = m + ortho_count;
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let mut rows: Vec<(Vec<f64>, f64)> = core
                .examples()
                .iter()
                .map(|e| {
                    let mut c = e.signal.coords().to_vec();
                    c.resize(dim, 0.0);
                    (c, e.outcome)
                })
                .collect();
            for j in 0..*ortho_count {
                let mut c = vec![0.0; dim];
                c[m + j] = rng.gen_range(0.5..1.5);
                let pos = rng.gen_range(0..=rows.len());
                rows.insert(pos, (c, rng.gen_range(-1.0..1.0)));
            }
            let mut sample = Sample::new(dim);
            for (c, y) in rows {
                sample.push(c, y)?;
            }
            Ok(sample)
        }
    }
}

/// Removes examples supported outside the first `core_dim` coordinates,
/// keeping ids and order of the rest.
pub fn drop_orthogonal(sample: &Sample, core_dim: usize) -> Result<Sample> {
    let kept = sample
        .examples()
        .iter()
        .filter(|e| e.signal.coords()[core_dim..].iter().all(|&v| v == 0.0))
        .cloned()
        .collect();
    Sample::from_examples(sample.dimension(), kept)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CounterexampleExpectations {
    /// `γ_{2i−1} = 0`, `γ_{2i} = 1/(1+a)`.
    pub predicted_gammas: Vec<f64>,
    /// `1 + 1/(1+a)²`
    pub limit_ratio: f64,
}

pub fn counterexample_expectations(a: f64, half_pairs: usize) -> Result<CounterexampleExpectations> {
    check_ridge(a)?;
    let even = 1.0 / (1.0 + a);
    let predicted_gammas = (0..half_pairs).flat_map(|_| [0.0, even]).collect();
    Ok(CounterexampleExpectations {
        predicted_gammas,
        limit_ratio: 1.0 + even * even,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ZeroComparatorRatio {
    pub t: usize,
    pub ratio: f64,
}

/// `Σ_{s≤t}(γ_s − y_s)² / Σ_{s≤t} y_s²`: online loss against the zero
/// function, for prefixes where the denominator is positive.
pub fn ratio_against_zero(trace: &OnlineTrace) -> Vec<ZeroComparatorRatio> {
    let mut num = 0.0;
    let mut den = 0.0;
    let mut out = Vec::new();
    for s in &trace.steps {
        num += s.sq_loss;
        den += s.outcome * s.outcome;
        if den > 0.0 {
            out.push(ZeroComparatorRatio {
                t: s.t,
                ratio: num / den,
            });
        }
    }
    out
}
