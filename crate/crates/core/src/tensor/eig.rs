use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::matrix::DenseMatrix;
use crate::error::{Error, Result};

/// Relative symmetry tolerance accepted by [`sym_eig`].
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Negative eigenvalues with `|μ| < CLAMP_REL * μ_max` are roundoff and become 0.
pub const CLAMP_REL: f64 = 1e-10;

static EIG_CALLS: AtomicUsize = AtomicUsize::new(0);

/// Number of symmetric eigendecompositions performed by this process.
pub fn eig_call_count() -> usize {
    EIG_CALLS.load(Ordering::Relaxed)
}

/// Eigendecomposition `A = V diag(μ) Vᵀ` with eigenvalues sorted descending.
///
/// Eigenvectors are the columns of `vectors`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SymEig {
    values: Vec<f64>,
    vectors: DenseMatrix,
}

impl SymEig {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn vectors(&self) -> &DenseMatrix {
        &self.vectors
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn max_value(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    /// Eigenvalues above the relative zero threshold, still descending.
    pub fn nonzero_values(&self) -> Vec<f64> {
        let cut = CLAMP_REL * self.max_value();
        self.values.iter().copied().filter(|&m| m > cut).collect()
    }

    /// Coordinates of `v` in the eigenbasis, `Vᵀ v`.
    pub fn coords(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.vectors.tr_matvec(v)
    }

    /// Maps eigenbasis coordinates back, `V c`.
    pub fn from_coords(&self, c: &[f64]) -> Result<Vec<f64>> {
        self.vectors.matvec(c)
    }

    /// `V diag(μ) Vᵀ`.
    pub fn reconstruct(&self) -> DenseMatrix {
        let n = self.dim();
        let scaled = DenseMatrix::from_fn(n, n, |i, j| self.vectors.get(i, j) * self.values[j]);
        scaled.matmul_tr(&self.vectors).expect("square")
    }

    /// Applies `(A + λI)^{-k}` to `b`. `k = 0` returns `b`.
    pub fn resolvent_power(&self, lambda: f64, k: i32, b: &[f64]) -> Result<Vec<f64>> {
        check_lambda(lambda)?;
        let mut c = self.coords(b)?;
        for (ci, &mu) in c.iter_mut().zip(&self.values) {
            *ci /= (mu + lambda).powi(k);
        }
        self.from_coords(&c)
    }
}

pub(crate) fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Domain(format!(
            "regularization must be a positive finite number, got {lambda}"
        )));
    }
    Ok(())
}

/// Symmetric eigendecomposition (Householder tridiagonalization + implicit QR).
pub fn sym_eig(a: &DenseMatrix) -> Result<SymEig> {
    a.check_square()?;
    let scale = a.max_abs().max(f64::MIN_POSITIVE);
    let asym = a.asymmetry();
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::Dimension(format!(
            "matrix is not symmetric: max |a_ij - a_ji| = {asym:e}"
        )));
    }
    EIG_CALLS.fetch_add(1, Ordering::Relaxed);
    let n = a.rows();
    if n == 0 {
        return Ok(SymEig {
            values: vec![],
            vectors: DenseMatrix::zeros(0, 0),
        });
    }
    // symmetrize exactly so the solver sees a symmetric input
    let sym = DenseMatrix::from_fn(n, n, |i, j| 0.5 * (a.get(i, j) + a.get(j, i)));
    let eig = nalgebra::SymmetricEigen::new(sym.to_nalgebra());

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));

    let mu_max = eig.eigenvalues[order[0]].max(0.0);
    let values: Vec<f64> = order
        .iter()
        .map(|&i| {
            let mu = eig.eigenvalues[i];
            if mu < 0.0 && mu.abs() < CLAMP_REL * mu_max {
                0.0
            } else {
                mu
            }
        })
        .collect();
    let vectors = DenseMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(SymEig { values, vectors })
}

/// Solves `(A + λI) x = b` through a precomputed eigendecomposition of `A`.
pub fn regularized_solve(eig: &SymEig, lambda: f64, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != eig.dim() {
        return Err(Error::Dimension(format!(
            "right-hand side has length {}, system has dimension {}",
            b.len(),
            eig.dim()
        )));
    }
    eig.resolvent_power(lambda, 1, b)
}

/// Quadratic form `bᵀ (A + λI)^{-k} A^m b` evaluated in the eigenbasis.
pub fn spectral_form(eig: &SymEig, lambda: f64, k: i32, m: i32, b: &[f64]) -> Result<f64> {
    check_lambda(lambda)?;
    let w = eig.coords(b)?;
    Ok(w
        .iter()
        .zip(eig.values())
        .map(|(wi, &mu)| wi * wi * mu.powi(m) / (mu + lambda).powi(k))
        .sum())
}

/// Residual `‖(A + λI)x − b‖∞`.
pub fn residual_inf(a: &DenseMatrix, lambda: f64, x: &[f64], b: &[f64]) -> f64 {
    let ax = a.matvec(x).expect("dimensions checked by caller");
    ax.iter()
        .zip(x)
        .zip(b)
        .map(|((axi, xi), bi)| (axi + lambda * xi - bi).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::matrix::max_abs_diff;
    use crate::tensor::rng::SeededRng;

    fn random_sym(n: usize, seed: u64) -> DenseMatrix {
        let mut rng = SeededRng::new(seed, 0);
        let x = DenseMatrix::from_fn(n, n, |_, _| rng.normal());
        x.add(&x.transpose()).unwrap().scale(0.5)
    }

    fn random_spd(n: usize, seed: u64) -> DenseMatrix {
        let mut rng = SeededRng::new(seed, 1);
        let x = DenseMatrix::from_fn(n + 3, n, |_, _| rng.normal());
        x.gram().scale(1.0 / n as f64)
    }

    #[test]
    fn identity_and_diagonal() {
        let e = sym_eig(&DenseMatrix::identity(3)).unwrap();
        assert_eq!(e.values(), &[1.0, 1.0, 1.0]);
        let e = sym_eig(&DenseMatrix::from_diag(&[1.0, 3.0])).unwrap();
        assert!(max_abs_diff(e.values(), &[3.0, 1.0]) < 1e-15);
    }

    #[test]
    fn random_reconstruction_and_orthonormality() {
        let a = random_sym(20, 11);
        let e = sym_eig(&a).unwrap();
        assert!(e.reconstruct().max_abs_diff(&a) < 1e-8);
        let vtv = e.vectors().gram();
        assert!(vtv.max_abs_diff(&DenseMatrix::identity(20)) < 1e-8);
        assert!(e.values().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn rejects_asymmetric_and_rectangular() {
        let mut a = DenseMatrix::identity(3);
        a.set(0, 1, 0.5);
        assert!(matches!(sym_eig(&a), Err(Error::Dimension(_))));
        assert!(matches!(
            sym_eig(&DenseMatrix::zeros(2, 3)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn roundoff_negatives_are_clamped() {
        // rank-1 PSD matrix: the zero eigenvalues come back as tiny ±ε
        let v = [1.0, 2.0, -0.5, 3.0];
        let a = DenseMatrix::from_fn(4, 4, |i, j| v[i] * v[j]);
        let e = sym_eig(&a).unwrap();
        assert!(e.values().iter().all(|&m| m >= 0.0));
        assert_eq!(e.nonzero_values().len(), 1);
    }

    #[test]
    fn solve_trivial_cases() {
        let e = sym_eig(&DenseMatrix::zeros(2, 2)).unwrap();
        let x = regularized_solve(&e, 2.0, &[4.0, -6.0]).unwrap();
        assert!(max_abs_diff(&x, &[2.0, -3.0]) < 1e-15);
        let e = sym_eig(&DenseMatrix::identity(2)).unwrap();
        let x = regularized_solve(&e, 1.0, &[2.0, 4.0]).unwrap();
        assert!(max_abs_diff(&x, &[1.0, 2.0]) < 1e-15);
    }

    #[test]
    fn solve_rejects_nonpositive_lambda() {
        let e = sym_eig(&DenseMatrix::identity(2)).unwrap();
        assert!(matches!(
            regularized_solve(&e, 0.0, &[1.0, 1.0]),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            regularized_solve(&e, -1.0, &[1.0, 1.0]),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            regularized_solve(&e, 1.0, &[1.0]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn solve_matches_dense_inverse() {
        let a = random_spd(15, 5);
        let e = sym_eig(&a).unwrap();
        let b: Vec<f64> = (0..15).map(|i| (i as f64).cos()).collect();
        for &lambda in &[1e-3, 0.1, 1.0, 10.0] {
            let x = regularized_solve(&e, lambda, &b).unwrap();
            // independent route: LU inverse of (A + λI)
            let inv = a
                .add_diagonal(lambda)
                .unwrap()
                .to_nalgebra()
                .try_inverse()
                .unwrap();
            let oracle = DenseMatrix::from_nalgebra(&inv).matvec(&b).unwrap();
            let scale = crate::tensor::matrix::max_abs(&oracle);
            assert!(max_abs_diff(&x, &oracle) < 1e-8 * scale.max(1.0));
            let bnorm = crate::tensor::matrix::max_abs(&b);
            assert!(residual_inf(&a, lambda, &x, &b) < 1e-8 * bnorm);
        }
    }

    #[test]
    fn solution_norm_shrinks_with_lambda() {
        let a = random_spd(12, 8);
        let e = sym_eig(&a).unwrap();
        let b: Vec<f64> = (0..12).map(|i| 1.0 + i as f64).collect();
        let mut prev = f64::INFINITY;
        for k in -6..4 {
            let x = regularized_solve(&e, 10f64.powi(k), &b).unwrap();
            let nx = crate::tensor::matrix::norm2(&x);
            assert!(nx <= prev);
            prev = nx;
        }
    }
}
