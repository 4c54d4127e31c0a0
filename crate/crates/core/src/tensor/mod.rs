//! Dense linear algebra, spectral solves, random projections and seeded randomness.

mod eig;
pub mod io;
mod matrix;
mod projection;
mod rng;

pub use eig::{
    eig_call_count, regularized_solve, residual_inf, spectral_form, sym_eig, SymEig, CLAMP_REL,
    SYMMETRY_TOL,
};
pub(crate) use eig::check_lambda;
pub use matrix::{axpy, dot, max_abs, max_abs_diff, norm2, DenseMatrix};
pub use projection::{make_projection, project_rows, PROJECTION_FAMILY};
pub use rng::{derive_seed, SeededRng};
