//! Kernel families, Gram matrices and cross-kernel vectors.
//!
//! Every signal carries an ordinal `id` next to its coordinates. The delta
//! kernel compares ids rather than coordinates, so two examples with equal
//! coordinates but different positions in a sample are distinct points of
//! the domain. Probe points that are not part of any sample use id 0.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// A point of the input domain.
#[derive(Clone, Debug, PartialEq)]
pub struct Signal {
    coords: Vec<f64>,
    id: usize,
}

impl Signal {
    pub fn new(coords: Vec<f64>, id: usize) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::input("signal has no coordinates"));
        }
        if let Some(i) = coords.iter().position(|c| !c.is_finite()) {
            return Err(Error::input(format!("signal coordinate {i} is not finite")));
        }
        Ok(Signal { coords, id })
    }

    /// A point outside every sample (id 0).
    pub fn probe(coords: Vec<f64>) -> Result<Self> {
        Signal::new(coords, 0)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum KernelSpec {
    /// `x1 · x2`
    Linear,
    /// `exp(-b ‖x1 − x2‖²)`
    Rbf { b: f64 },
    /// `(x1 · x2 + offset)^degree`
    Polynomial { degree: u32, offset: f64 },
    /// 1 on equal ids, 0 otherwise.
    Delta,
    /// `base + alpha · delta`
    Shifted { base: Box<KernelSpec>, alpha: f64 },
}

impl KernelSpec {
    pub fn shifted(base: KernelSpec, alpha: f64) -> Self {
        KernelSpec::Shifted {
            base: Box::new(base),
            alpha,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            KernelSpec::Linear | KernelSpec::Delta => Ok(()),
            KernelSpec::Rbf { b } => {
                if b.is_finite() && *b > 0.0 {
                    Ok(())
                } else {
                    Err(Error::input(format!("rbf width must be positive, got {b}")))
                }
            }
            KernelSpec::Polynomial { degree, offset } => {
                if *degree == 0 {
                    Err(Error::input("polynomial degree must be positive"))
                } else if !(offset.is_finite() && *offset >= 0.0) {
                    Err(Error::input(format!(
                        "polynomial offset must be nonnegative, got {offset}"
                    )))
                } else {
                    Ok(())
                }
            }
            KernelSpec::Shifted { base, alpha } => {
                if matches!(**base, KernelSpec::Shifted { .. }) {
                    return Err(Error::input("shifted kernels cannot be nested"));
                }
                if !(alpha.is_finite() && *alpha >= 0.0) {
                    return Err(Error::input(format!(
                        "shift alpha must be nonnegative, got {alpha}"
                    )));
                }
                base.validate()
            }
        }
    }

    /// True when the kernel reads coordinates (everything except pure delta).
    fn uses_coords(&self) -> bool {
        !matches!(self, KernelSpec::Delta)
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Linear => write!(f, "linear"),
            KernelSpec::Rbf { b } => write!(f, "rbf:{b}"),
            KernelSpec::Polynomial { degree, offset } => write!(f, "poly:{degree}:{offset}"),
            KernelSpec::Delta => write!(f, "delta"),
            KernelSpec::Shifted { base, alpha } => write!(f, "shifted:{base}:{alpha}"),
        }
    }
}

impl FromStr for KernelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parse_f64 = |field: &str, what: &str| -> Result<f64> {
            field
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::input(format!("bad {what} `{field}` in kernel `{s}`")))
        };
        let parts: Vec<&str> = s.trim().split(':').collect();
        let spec = match parts.as_slice() {
            ["linear"] => KernelSpec::Linear,
            ["delta"] => KernelSpec::Delta,
            ["rbf", b] => KernelSpec::Rbf {
                b: parse_f64(b, "rbf width")?,
            },
            ["poly", degree, offset] => KernelSpec::Polynomial {
                degree: degree
                    .trim()
                    .parse()
                    .map_err(|_| Error::input(format!("bad degree `{degree}` in kernel `{s}`")))?,
                offset: parse_f64(offset, "offset")?,
            },
            ["shifted", base @ .., alpha] if !base.is_empty() => {
                let base: KernelSpec = base.join(":").parse()?;
                KernelSpec::shifted(base, parse_f64(alpha, "alpha")?)
            }
            _ => return Err(Error::input(format!("unrecognised kernel `{s}`"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

fn delta(x1: &Signal, x2: &Signal) -> f64 {
    if x1.id == x2.id {
        1.0
    } else {
        0.0
    }
}

/// Kernel value without the dimension check.
fn eval_unchecked(spec: &KernelSpec, x1: &Signal, x2: &Signal) -> f64 {
    match spec {
        KernelSpec::Linear => dot(&x1.coords, &x2.coords),
        KernelSpec::Rbf { b } => {
            let sq: f64 = x1
                .coords
                .iter()
                .zip(&x2.coords)
                .map(|(u, v)| (u - v) * (u - v))
                .sum();
            (-b * sq).exp()
        }
        KernelSpec::Polynomial { degree, offset } => {
            (dot(&x1.coords, &x2.coords) + offset).powi(*degree as i32)
        }
        KernelSpec::Delta => delta(x1, x2),
        KernelSpec::Shifted { base, alpha } => {
            eval_unchecked(base, x1, x2) + alpha * delta(x1, x2)
        }
    }
}

pub fn eval_kernel(spec: &KernelSpec, x1: &Signal, x2: &Signal) -> Result<f64> {
    if spec.uses_coords() && x1.dim() != x2.dim() {
        return Err(Error::input(format!(
            "signal dimensions differ: {} vs {}",
            x1.dim(),
            x2.dim()
        )));
    }
    Ok(eval_unchecked(spec, x1, x2))
}

fn check_homogeneous(spec: &KernelSpec, signals: &[Signal], extra: Option<&Signal>) -> Result<()> {
    if !spec.uses_coords() {
        return Ok(());
    }
    let Some(first) = signals.first().or(extra) else {
        return Ok(());
    };
    let dim = first.dim();
    for (i, s) in signals.iter().enumerate() {
        if s.dim() != dim {
            return Err(Error::input(format!(
                "signal {i} has dimension {}, expected {dim}",
                s.dim()
            )));
        }
    }
    if let Some(x) = extra {
        if x.dim() != dim {
            return Err(Error::input(format!(
                "query signal has dimension {}, expected {dim}",
                x.dim()
            )));
        }
    }
    Ok(())
}

/// Kernel matrix over a list of signals. Exactly symmetric by construction.
#[derive(Clone, Debug)]
pub struct GramMatrix {
    entries: DMatrix<f64>,
    spec: KernelSpec,
}

impl GramMatrix {
    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_entries(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        if self.dim() == 0 {
            return 0.0;
        }
        SymmetricEigen::new(self.entries.clone())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Smallest eigenvalue is at least `−T·ε·max|K|`.
    pub fn is_psd(&self) -> bool {
        let max_abs = self.entries.amax();
        self.min_eigenvalue() >= -(self.dim() as f64) * f64::EPSILON * max_abs
    }
}

pub fn gram(spec: &KernelSpec, signals: &[Signal]) -> Result<GramMatrix> {
    check_homogeneous(spec, signals, None)?;
    let n = signals.len();
    let mut entries = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = eval_unchecked(spec, &signals[i], &signals[j]);
            entries[(i, j)] = v;
            entries[(j, i)] = v;
        }
    }
    Ok(GramMatrix {
        entries,
        spec: spec.clone(),
    })
}

/// `k(x)`: kernel values between each signal and `x`.
pub fn cross_vector(spec: &KernelSpec, signals: &[Signal], x: &Signal) -> Result<DVector<f64>> {
    check_homogeneous(spec, signals, Some(x))?;
    Ok(DVector::from_iterator(
        signals.len(),
        signals.iter().map(|s| eval_unchecked(spec, s, x)),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sig(coords: &[f64], id: usize) -> Signal {
        Signal::new(coords.to_vec(), id).unwrap()
    }

    #[test]
    fn linear_dot_product() {
        let v = eval_kernel(&KernelSpec::Linear, &sig(&[1.0, 2.0], 1), &sig(&[3.0, 4.0], 2)).unwrap();
        assert_eq!(v, 11.0);
    }

    #[test]
    fn delta_compares_ids() {
        let a = sig(&[1.0], 4);
        let b = sig(&[2.0], 4);
        let c = sig(&[1.0], 5);
        assert_eq!(eval_kernel(&KernelSpec::Delta, &a, &b).unwrap(), 1.0);
        assert_eq!(eval_kernel(&KernelSpec::Delta, &a, &c).unwrap(), 0.0);
        // delta ignores coordinates, so differing dimensions are fine
        assert_eq!(eval_kernel(&KernelSpec::Delta, &a, &sig(&[1.0, 1.0], 9)).unwrap(), 0.0);
    }

    #[test]
    fn rbf_on_diagonal_is_one() {
        let x = sig(&[0.3, -2.0], 1);
        assert_eq!(eval_kernel(&KernelSpec::Rbf { b: 1.0 }, &x, &x).unwrap(), 1.0);
    }

    #[test]
    fn polynomial_value() {
        let spec = KernelSpec::Polynomial { degree: 2, offset: 1.0 };
        let v = eval_kernel(&spec, &sig(&[1.0, 2.0], 1), &sig(&[3.0, 4.0], 2)).unwrap();
        assert_eq!(v, 144.0);
    }

    #[test]
    fn dimension_mismatch_is_input_error() {
        let r = eval_kernel(&KernelSpec::Linear, &sig(&[1.0], 1), &sig(&[1.0, 2.0], 2));
        assert!(matches!(r, Err(Error::Input(_))));
        let r = gram(&KernelSpec::Linear, &[sig(&[1.0], 1), sig(&[1.0, 2.0], 2)]);
        assert!(matches!(r, Err(Error::Input(_))));
    }

    #[test]
    fn invalid_signals_rejected() {
        assert!(Signal::new(vec![], 1).is_err());
        assert!(Signal::new(vec![f64::NAN], 1).is_err());
        assert!(Signal::new(vec![f64::INFINITY], 1).is_err());
    }

    #[test]
    fn gram_of_orthonormal_is_identity() {
        let g = gram(&KernelSpec::Linear, &[sig(&[1.0, 0.0], 1), sig(&[0.0, 1.0], 2)]).unwrap();
        assert_eq!(g.entries(), &DMatrix::identity(2, 2));
    }

    #[test]
    fn gram_delta_distinct_ids() {
        let s = [sig(&[1.0], 1), sig(&[1.0], 2), sig(&[5.0], 3)];
        let g = gram(&KernelSpec::Delta, &s).unwrap();
        assert_eq!(g.entries(), &DMatrix::identity(3, 3));
    }

    #[test]
    fn gram_shifted_linear() {
        let spec = KernelSpec::shifted(KernelSpec::Linear, 0.5);
        let g = gram(&spec, &[sig(&[1.0, 0.0], 1), sig(&[1.0, 0.0], 2)]).unwrap();
        assert_eq!(g.entries(), &DMatrix::from_row_slice(2, 2, &[1.5, 1.0, 1.0, 1.5]));
    }

    #[test]
    fn cross_vector_cases() {
        let s = [sig(&[1.0, 0.0], 1), sig(&[0.0, 1.0], 2)];
        let k = cross_vector(&KernelSpec::Linear, &s, &sig(&[2.0, 3.0], 0)).unwrap();
        assert_eq!(k.as_slice(), &[2.0, 3.0]);

        let k = cross_vector(&KernelSpec::Linear, &[], &sig(&[2.0, 3.0], 0)).unwrap();
        assert_eq!(k.len(), 0);

        let k = cross_vector(&KernelSpec::Delta, &s, &sig(&[1.0, 0.0], 7)).unwrap();
        assert_eq!(k.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn spec_text_round_trip() {
        for text in ["linear", "rbf:0.5", "poly:3:1", "delta", "shifted:linear:0.25", "shifted:rbf:2:0.1"] {
            let spec: KernelSpec = text.parse().unwrap();
            assert_eq!(spec.to_string(), text);
        }
        assert_eq!(
            "shifted:poly:2:1:0.5".parse::<KernelSpec>().unwrap(),
            KernelSpec::shifted(KernelSpec::Polynomial { degree: 2, offset: 1.0 }, 0.5)
        );
    }

    #[test]
    fn spec_text_rejects_bad_params() {
        for text in ["rbf:0", "rbf:-1", "poly:0:1", "poly:2:-1", "shifted:linear:-1", "shifted:shifted:linear:1:1", "cubic", "rbf"] {
            assert!(text.parse::<KernelSpec>().is_err(), "{text}");
        }
    }

    fn spec_strategy() -> impl Strategy<Value = KernelSpec> {
        prop_oneof![
            Just(KernelSpec::Linear),
            (0.1f64..3.0).prop_map(|b| KernelSpec::Rbf { b }),
            (1u32..4, 0.0f64..2.0).prop_map(|(degree, offset)| KernelSpec::Polynomial { degree, offset }),
            Just(KernelSpec::Delta),
            (0.0f64..2.0).prop_map(|a| KernelSpec::shifted(KernelSpec::Rbf { b: 0.7 }, a)),
        ]
    }

    fn signals_strategy() -> impl Strategy<Value = Vec<Signal>> {
        (1usize..4).prop_flat_map(|dim| {
            prop::collection::vec(prop::collection::vec(-2.0f64..2.0, dim), 1..=12).prop_map(|rows| {
                rows.into_iter()
                    .enumerate()
                    .map(|(i, c)| Signal::new(c, i + 1).unwrap())
                    .collect()
            })
        })
    }

    proptest! {
        #[test]
        fn kernel_is_symmetric(spec in spec_strategy(), s in signals_strategy()) {
            for x1 in &s {
                for x2 in &s {
                    prop_assert_eq!(eval_kernel(&spec, x1, x2).unwrap(), eval_kernel(&spec, x2, x1).unwrap());
                }
            }
        }

        #[test]
        fn gram_quadratic_form_nonnegative(
            spec in spec_strategy(),
            s in signals_strategy(),
            coeffs in prop::collection::vec(-3.0f64..3.0, 12),
        ) {
            let g = gram(&spec, &s).unwrap();
            let alpha = DVector::from_column_slice(&coeffs[..s.len()]);
            let q = alpha.dot(&(g.entries() * &alpha));
            let tol = 12.0 * f64::EPSILON * alpha.norm_squared() * g.entries().amax();
            prop_assert!(q >= -tol, "quadratic form {q}");
            prop_assert!(g.is_psd());
        }

        #[test]
        fn shifted_gram_adds_alpha_identity(s in signals_strategy(), alpha in 0.0f64..3.0) {
            let base = KernelSpec::Rbf { b: 0.5 };
            let g0 = gram(&base, &s).unwrap().into_entries();
            let g1 = gram(&KernelSpec::shifted(base, alpha), &s).unwrap().into_entries();
            let expected = g0 + DMatrix::identity(s.len(), s.len()) * alpha;
            prop_assert!((g1 - expected).amax() <= 1e-15);
        }
    }
}
