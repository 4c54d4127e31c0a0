use super::matrix::DenseMatrix;
use super::rng::SeededRng;
use crate::error::{Error, Result};

/// Recorded in attribution metadata for projected attributors.
pub const PROJECTION_FAMILY: &str = "gaussian";

/// Gaussian sketch `P ∈ R^{p×p̃}` with i.i.d. `N(0, 1/p̃)` entries.
///
/// With this scaling `E‖Pᵀv‖² = ‖v‖²`.
pub fn make_projection(p: usize, p_tilde: usize, rng: &mut SeededRng) -> Result<DenseMatrix> {
    if p_tilde == 0 || p_tilde > p {
        return Err(Error::Domain(format!(
            "projection dimension must satisfy 1 <= p~ <= p, got p~={p_tilde}, p={p}"
        )));
    }
    let sd = 1.0 / (p_tilde as f64).sqrt();
    let data = (0..p * p_tilde).map(|_| rng.normal() * sd).collect();
    Ok(DenseMatrix::from_vec_unchecked(p, p_tilde, data))
}

/// Projects each row of `m` (n×p) into `m P` (n×p̃).
pub fn project_rows(m: &DenseMatrix, proj: &DenseMatrix) -> Result<DenseMatrix> {
    if m.cols() != proj.rows() {
        return Err(Error::Dimension(format!(
            "rows of length {} cannot be projected by a {}x{} matrix",
            m.cols(),
            proj.rows(),
            proj.cols()
        )));
    }
    m.matmul(proj)
}
