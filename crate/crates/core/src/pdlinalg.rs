//! Positive-definite linear algebra.
//!
//! `CholFactor` stores the lower factor in packed row form so that a bordered
//! extension (one new row and column) is an append: one forward substitution
//! and one scalar pivot. The pivot of an extension is the Schur complement
//! `d − vᵀM⁻¹v` of the new diagonal entry, which for a regularized Gram
//! matrix `K_{t−1} + aI` bordered by example `t` equals `a + d_t`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Lower Cholesky factor of a symmetric positive-definite matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CholFactor {
    /// Row `i` occupies `packed[i(i+1)/2 .. (i+1)(i+2)/2]`.
    packed: Vec<f64>,
    dim: usize,
    regularizer: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct ExtensionResult {
    pub new_factor: CholFactor,
    pub pivot: f64,
}

#[inline]
fn row_start(i: usize) -> usize {
    i * (i + 1) / 2
}

impl CholFactor {
    /// The factor of the 0×0 matrix; the starting point for growth by `extend`.
    pub fn empty() -> Self {
        CholFactor {
            packed: Vec::new(),
            dim: 0,
            regularizer: None,
        }
    }

    /// Records the ridge `a` the factored matrix was shifted by.
    pub fn with_regularizer(mut self, a: f64) -> Self {
        self.regularizer = Some(a);
        self
    }

    pub fn regularizer(&self) -> Option<f64> {
        self.regularizer
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.packed[row_start(i)..row_start(i + 1)]
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        debug_assert!(j <= i);
        self.packed[row_start(i) + j]
    }

    pub fn lower(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| if j <= i { self.at(i, j) } else { 0.0 })
    }

    /// `L Lᵀ`
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let l = self.lower();
        &l * l.transpose()
    }

    pub fn diagonal(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.dim).map(move |i| self.at(i, i))
    }

    /// Squared ratio of largest to smallest diagonal entry of `L`; a cheap
    /// lower estimate of the condition number of the factored matrix.
    pub fn condition_estimate(&self) -> f64 {
        if self.dim == 0 {
            return 1.0;
        }
        let (lo, hi) = self
            .diagonal()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), d| (lo.min(d), hi.max(d)));
        (hi / lo).powi(2)
    }

    fn check_len(&self, len: usize, what: &str) -> Result<()> {
        if len != self.dim {
            return Err(Error::input(format!(
                "{what} has length {len}, factor has dimension {}",
                self.dim
            )));
        }
        Ok(())
    }

    /// `L⁻¹ b`
    pub fn forward_solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(b.len(), "right-hand side")?;
        Ok(self.forward_unchecked(b.as_slice()))
    }

    fn forward_unchecked(&self, b: &[f64]) -> DVector<f64> {
        let mut z = DVector::zeros(b.len());
        for i in 0..b.len() {
            let row = self.row(i);
            let s: f64 = row[..i].iter().zip(z.iter()).map(|(l, zj)| l * zj).sum();
            z[i] = (b[i] - s) / row[i];
        }
        z
    }

    /// `L⁻ᵀ z`
    fn backward_unchecked(&self, z: &DVector<f64>) -> DVector<f64> {
        let n = self.dim;
        let mut x = z.clone();
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s -= self.at(j, i) * x[j];
            }
            x[i] = s / self.at(i, i);
        }
        x
    }

    /// `M⁻¹ b` by two triangular solves.
    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(b.len(), "right-hand side")?;
        let z = self.forward_unchecked(b.as_slice());
        Ok(self.backward_unchecked(&z))
    }

    /// `bᵀ M⁻¹ b = ‖L⁻¹ b‖²`
    pub fn quad_form(&self, b: &DVector<f64>) -> Result<f64> {
        Ok(self.forward_solve(b)?.norm_squared())
    }

    /// Dense `M⁻¹`, column by column. Only meant for small matrices.
    pub fn inverse(&self) -> DMatrix<f64> {
        let mut inv = DMatrix::zeros(self.dim, self.dim);
        for j in 0..self.dim {
            let mut e = DVector::zeros(self.dim);
            e[j] = 1.0;
            let col = self.backward_unchecked(&self.forward_unchecked(e.as_slice()));
            inv.set_column(j, &col);
        }
        inv
    }

    pub fn logdet(&self) -> f64 {
        2.0 * self.diagonal().map(f64::ln).sum::<f64>()
    }

    /// Borders the factored matrix with `new_col` and `new_diag`, in place.
    /// Returns the pivot `new_diag − new_colᵀ M⁻¹ new_col`.
    pub fn extend_in_place(&mut self, new_col: &DVector<f64>, new_diag: f64) -> Result<f64> {
        self.check_len(new_col.len(), "new column")?;
        let w = self.forward_unchecked(new_col.as_slice());
        self.push_row(&w, new_diag)
    }

    /// Appends a row given the already forward-solved column `w = L⁻¹ v`.
    pub(crate) fn push_row(&mut self, w: &DVector<f64>, new_diag: f64) -> Result<f64> {
        debug_assert_eq!(w.len(), self.dim);
        let pivot = new_diag - w.norm_squared();
        if !(pivot > 0.0) {
            return Err(Error::NotPositiveDefinite {
                index: self.dim,
                pivot,
            });
        }
        self.packed.extend(w.iter());
        self.packed.push(pivot.sqrt());
        self.dim += 1;
        Ok(pivot)
    }

    pub fn extend(&self, new_col: &DVector<f64>, new_diag: f64) -> Result<ExtensionResult> {
        let mut new_factor = self.clone();
        let pivot = new_factor.extend_in_place(new_col, new_diag)?;
        Ok(ExtensionResult { new_factor, pivot })
    }
}

/// Cholesky factorization of a symmetric positive-definite matrix.
///
/// Only the lower triangle is read; the matrix must be square and symmetric
/// to within `1e-12` relative.
pub fn cholesky(m: &DMatrix<f64>) -> Result<CholFactor> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::input(format!("matrix is {}×{}, not square", n, m.ncols())));
    }
    let scale = m.amax();
    let asym = (m - m.transpose()).amax();
    if asym > 1e-12 * scale {
        return Err(Error::input(format!("matrix is not symmetric (max asymmetry {asym:e})")));
    }
    let mut packed = vec![0.0; row_start(n)];
    for i in 0..n {
        for j in 0..=i {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= packed[row_start(i) + k] * packed[row_start(j) + k];
            }
            if i == j {
                if !(s > 0.0) {
                    return Err(Error::NotPositiveDefinite { index: i, pivot: s });
                }
                packed[row_start(i) + i] = s.sqrt();
            } else {
                packed[row_start(i) + j] = s / packed[row_start(j) + j];
            }
        }
    }
    Ok(CholFactor {
        packed,
        dim: n,
        regularizer: None,
    })
}

/// `M + aI`
pub fn shifted(m: &DMatrix<f64>, a: f64) -> DMatrix<f64> {
    let mut out = m.clone();
    for i in 0..out.nrows().min(out.ncols()) {
        out[(i, i)] += a;
    }
    out
}

/// Max absolute entry of `A(BA + aI)⁻¹ − (AB + aI)⁻¹A`.
pub fn check_push_through(a_mat: &DMatrix<f64>, b_mat: &DMatrix<f64>, a: f64) -> Result<f64> {
    let (m, n) = a_mat.shape();
    if b_mat.shape() != (n, m) {
        return Err(Error::input(format!(
            "B is {:?}, expected {}×{}",
            b_mat.shape(),
            n,
            m
        )));
    }
    if !(a > 0.0) {
        return Err(Error::input(format!("shift must be positive, got {a}")));
    }
    let ba = shifted(&(b_mat * a_mat), a);
    let ab = shifted(&(a_mat * b_mat), a);
    // A (BA+aI)⁻¹ = ((BA+aI)⁻ᵀ Aᵀ)ᵀ
    let left = ba
        .transpose()
        .lu()
        .solve(&a_mat.transpose())
        .ok_or_else(|| Error::input("BA + aI is singular"))?
        .transpose();
    let right = ab
        .lu()
        .solve(a_mat)
        .ok_or_else(|| Error::input("AB + aI is singular"))?;
    Ok((left - right).amax())
}

/// Returns `(xᵀM⁻¹x, uᵀA⁻¹u)` where `A` is the leading `split`×`split` block
/// of `M` and `u` the first `split` coordinates of `x`.
pub fn check_partition_lemma(m: &DMatrix<f64>, split: usize, x: &DVector<f64>) -> Result<(f64, f64)> {
    let n = m.nrows();
    if split == 0 || split >= n {
        return Err(Error::input(format!("split {split} outside 1..{n}")));
    }
    if x.len() != n {
        return Err(Error::input(format!("vector length {} != {n}", x.len())));
    }
    let lhs = cholesky(m)?.quad_form(x)?;
    let block = m.view((0, 0), (split, split)).into_owned();
    let u = x.rows(0, split).into_owned();
    let rhs = cholesky(&block)?.quad_form(&u)?;
    Ok((lhs, rhs))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NullSpaceProjection {
    pub proj_sq_norm: f64,
    pub rank: usize,
}

pub const fn default_rank_tol(dim: usize) -> f64 {
    dim as f64 * 1e-12
}

/// `y` expanded in the eigenbasis of the symmetric PSD matrix `k`: pairs
/// `(λ_i, (v_iᵀy)²)`. Eigenvalues at or below `rank_tol · λ_max` are set to
/// exactly zero.
pub fn spectral_weights(k: &DMatrix<f64>, y: &DVector<f64>, rank_tol: Option<f64>) -> Result<Vec<(f64, f64)>> {
    let n = k.nrows();
    if k.ncols() != n || y.len() != n {
        return Err(Error::input("matrix and vector dimensions disagree"));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let tol = rank_tol.unwrap_or_else(|| default_rank_tol(n));
    let eig = SymmetricEigen::new(k.clone());
    let cutoff = tol * eig.eigenvalues.max().max(0.0);
    Ok(eig
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(i, &lambda)| {
            let w = eig.eigenvectors.column(i).dot(y).powi(2);
            (if lambda <= cutoff { 0.0 } else { lambda }, w)
        })
        .collect())
}

/// Squared norm of the projection of `y` onto the null space of the symmetric
/// PSD matrix `k`. Eigenvalues at or below `rank_tol · λ_max` count as zero.
pub fn null_space_projection(
    k: &DMatrix<f64>,
    y: &DVector<f64>,
    rank_tol: Option<f64>,
) -> Result<NullSpaceProjection> {
    let weights = spectral_weights(k, y, rank_tol)?;
    let proj_sq_norm = weights.iter().filter(|(l, _)| *l == 0.0).fold(0.0, |acc, (_, w)| acc + w);
    let rank = weights.iter().filter(|(l, _)| *l > 0.0).count();
    Ok(NullSpaceProjection { proj_sq_norm, rank })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn mat(n: usize, vals: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(n, n, vals)
    }

    #[test]
    fn cholesky_of_identity() {
        let f = cholesky(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(f.lower(), DMatrix::identity(3, 3));
    }

    #[test]
    fn cholesky_scalar() {
        assert_eq!(cholesky(&mat(1, &[4.0])).unwrap().lower(), mat(1, &[2.0]));
    }

    #[test]
    fn cholesky_two_by_two() {
        let f = cholesky(&mat(2, &[2.0, 1.0, 1.0, 2.0])).unwrap();
        let expected = mat(2, &[2f64.sqrt(), 0.0, 1.0 / 2f64.sqrt(), 1.5f64.sqrt()]);
        assert_relative_eq!(f.lower(), expected, epsilon = 1e-15);
        assert_relative_eq!(f.reconstruct(), mat(2, &[2.0, 1.0, 1.0, 2.0]), epsilon = 1e-14);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        match cholesky(&mat(2, &[1.0, 2.0, 2.0, 1.0])) {
            Err(Error::NotPositiveDefinite { index, .. }) => assert_eq!(index, 1),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            cholesky(&mat(2, &[1.0, 2.0, 0.0, 1.0])),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn solve_cases() {
        let f = cholesky(&DMatrix::identity(3, 3)).unwrap();
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(f.solve(&b).unwrap(), b);

        let f = cholesky(&mat(1, &[2.0])).unwrap();
        assert_relative_eq!(f.solve(&DVector::from_vec(vec![4.0])).unwrap()[0], 2.0, epsilon = 1e-15);

        let f = cholesky(&mat(2, &[2.0, 1.0, 1.0, 2.0])).unwrap();
        let x = f.solve(&DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert_relative_eq!(x[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(x[1], -1.0 / 3.0, epsilon = 1e-15);

        assert!(matches!(f.solve(&DVector::zeros(3)), Err(Error::Input(_))));
    }

    #[test]
    fn extend_pivots() {
        let f = cholesky(&mat(1, &[1.0])).unwrap();
        let e = f.extend(&DVector::from_vec(vec![0.0]), 1.0).unwrap();
        assert_eq!(e.pivot, 1.0);

        let f = cholesky(&mat(1, &[2.0])).unwrap();
        let e = f.extend(&DVector::from_vec(vec![1.0]), 2.0).unwrap();
        assert_relative_eq!(e.pivot, 1.5, epsilon = 1e-15);
        assert_relative_eq!(e.new_factor.lower(), cholesky(&mat(2, &[2.0, 1.0, 1.0, 2.0])).unwrap().lower(), epsilon = 1e-15);
        // the original factor is untouched
        assert_eq!(f.dim(), 1);

        let err = f.extend(&DVector::from_vec(vec![3.0]), 2.0);
        assert!(matches!(err, Err(Error::NotPositiveDefinite { index: 1, .. })));
    }

    #[test]
    fn logdet_cases() {
        assert_eq!(cholesky(&DMatrix::identity(4, 4)).unwrap().logdet(), 0.0);
        assert_relative_eq!(cholesky(&mat(1, &[4.0])).unwrap().logdet(), 4f64.ln(), epsilon = 1e-15);
        assert_relative_eq!(cholesky(&mat(2, &[2.0, 1.0, 1.0, 2.0])).unwrap().logdet(), 3f64.ln(), epsilon = 1e-15);
        assert_eq!(CholFactor::empty().logdet(), 0.0);
    }

    #[test]
    fn push_through_cases() {
        assert_eq!(check_push_through(&mat(1, &[1.0]), &mat(1, &[2.0]), 1.0).unwrap(), 0.0);
        let zero = DMatrix::zeros(2, 3);
        assert_eq!(check_push_through(&zero, &DMatrix::zeros(3, 2), 0.7).unwrap(), 0.0);
        assert!(check_push_through(&zero, &DMatrix::zeros(3, 2), 0.0).is_err());
        assert!(check_push_through(&zero, &DMatrix::zeros(2, 3), 1.0).is_err());
    }

    #[test]
    fn partition_lemma_cases() {
        let x = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        let (lhs, rhs) = check_partition_lemma(&DMatrix::identity(3, 3), 2, &x).unwrap();
        assert_eq!((lhs, rhs), (14.0, 5.0));

        let m = mat(3, &[2.0, 1.0, 0.0, 1.0, 3.0, 0.0, 0.0, 0.0, 5.0]);
        let x = DVector::from_vec(vec![1.0, 1.0, 0.0]);
        let (lhs, rhs) = check_partition_lemma(&m, 2, &x).unwrap();
        assert_relative_eq!(lhs, rhs, epsilon = 1e-15);

        assert!(check_partition_lemma(&m, 0, &x).is_err());
        assert!(check_partition_lemma(&m, 3, &x).is_err());
        assert!(matches!(
            check_partition_lemma(&mat(2, &[1.0, 2.0, 2.0, 1.0]), 1, &DVector::zeros(2)),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn null_space_cases() {
        let y = DVector::from_vec(vec![1.0, 0.0]);
        let p = null_space_projection(&DMatrix::identity(2, 2), &y, None).unwrap();
        assert_eq!(p.rank, 2);
        assert_eq!(p.proj_sq_norm, 0.0);

        let p = null_space_projection(&mat(2, &[1.0, 1.0, 1.0, 1.0]), &y, None).unwrap();
        assert_eq!(p.rank, 1);
        assert_relative_eq!(p.proj_sq_norm, 0.5, epsilon = 1e-14);

        let p = null_space_projection(&DMatrix::zeros(2, 2), &DVector::from_vec(vec![3.0, 4.0]), None).unwrap();
        assert_eq!(p.rank, 0);
        assert_relative_eq!(p.proj_sq_norm, 25.0, epsilon = 1e-14);
    }

    fn spd_strategy(max_dim: usize) -> impl Strategy<Value = DMatrix<f64>> {
        (1..=max_dim).prop_flat_map(|n| {
            prop::collection::vec(-1.0f64..1.0, n * n).prop_map(move |v| {
                let g = DMatrix::from_vec(n, n, v);
                shifted(&(&g * g.transpose()), 0.1)
            })
        })
    }

    proptest! {
        #[test]
        fn extension_chain_matches_dense(m in spd_strategy(12)) {
            let n = m.nrows();
            let mut f = CholFactor::empty();
            let mut log_pivots = 0.0;
            for t in 0..n {
                let col = DVector::from_iterator(t, (0..t).map(|i| m[(i, t)]));
                let before = f.logdet();
                let pivot = f.extend_in_place(&col, m[(t, t)]).unwrap();
                prop_assert!((f.logdet() - (before + pivot.ln())).abs() <= 1e-12 * (1.0 + before.abs()));
                log_pivots += pivot.ln();
            }
            let det = m.clone().lu().determinant();
            prop_assert!(((log_pivots.exp() - det) / det).abs() <= 1e-9);
            prop_assert!((f.reconstruct() - &m).amax() <= 1e-12 * m.amax());
        }

        #[test]
        fn solve_round_trip(m in spd_strategy(8), seed in prop::collection::vec(-5.0f64..5.0, 8)) {
            let n = m.nrows();
            let b = DVector::from_column_slice(&seed[..n]);
            let f = cholesky(&m).unwrap();
            let x = f.solve(&b).unwrap();
            let cond = f.condition_estimate().max(1.0);
            prop_assert!((&m * x - &b).norm() <= 1e-10 * b.norm().max(1.0) * cond);
        }

        #[test]
        fn sylvester_determinant(n in 1usize..=8, t in 1usize..=8, a in 0.1f64..5.0, seed in prop::collection::vec(-2.0f64..2.0, 64)) {
            let x = DMatrix::from_column_slice(n, t, &seed[..n * t]);
            let small = cholesky(&shifted(&(x.transpose() * &x / a), 1.0)).unwrap().logdet();
            let big = cholesky(&shifted(&(&x * x.transpose() / a), 1.0)).unwrap().logdet();
            prop_assert!((small - big).exp_m1().abs() <= 1e-9);
        }

        #[test]
        fn push_through_random(m in 1usize..6, n in 1usize..6, a in 0.1f64..3.0, seed in prop::collection::vec(-1.0f64..1.0, 72)) {
            let am = DMatrix::from_column_slice(m, n, &seed[..m * n]);
            let bm = DMatrix::from_column_slice(n, m, &seed[36..36 + m * n]);
            let r = check_push_through(&am, &bm.map(|v| v * 0.5), a).unwrap();
            prop_assert!(r <= 1e-10 * am.amax().max(1.0));
        }

        #[test]
        fn partition_lemma_holds(m in spd_strategy(6), split_frac in 0.0f64..1.0, seed in prop::collection::vec(-3.0f64..3.0, 6)) {
            let n = m.nrows();
            prop_assume!(n >= 2);
            let split = 1 + ((n - 1) as f64 * split_frac) as usize % (n - 1);
            let x = DVector::from_column_slice(&seed[..n]);
            let (lhs, rhs) = check_partition_lemma(&m, split, &x).unwrap();
            // dense-inverse oracle
            let inv = m.clone().try_inverse().unwrap();
            prop_assert!((lhs - x.dot(&(inv * &x))).abs() <= 1e-8 * lhs.max(1.0));
            prop_assert!(rhs >= 0.0);
            prop_assert!(lhs >= rhs - 1e-12 * lhs.max(1.0));
        }
    }

    #[test]
    fn push_through_random_tall() {
        // 3×5 A with B = Aᵀ
        let am = DMatrix::from_row_slice(3, 5, &[
            0.3, -1.2, 0.8, 0.1, 2.0,
            -0.7, 0.4, 0.0, 1.5, -0.2,
            1.1, 0.9, -0.6, 0.3, 0.5,
        ]);
        let r = check_push_through(&am, &am.transpose(), 0.5).unwrap();
        assert!(r <= 1e-10, "{r}");
    }
}
