use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{per_example_grads, Checkpoint, Dataset};
use crate::tensor::{check_lambda, project_rows, sym_eig, DenseMatrix, SymEig, CLAMP_REL};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FimMode {
    /// Decompose `F = (1/n) JᵀJ` (p×p).
    Primal,
    /// Decompose `K = (1/n) JJᵀ` (n×n).
    Dual,
}

/// Per-example gradient rows `J` together with one eigendecomposition of the
/// empirical Fisher (or of its dual Gram matrix), shared by every λ.
#[derive(Clone, Debug)]
pub struct FimContext {
    jac: DenseMatrix,
    eig: SymEig,
    mode: FimMode,
    projection: Option<DenseMatrix>,
    /// `J V` in primal mode, `U` in dual mode (n×r).
    left: DenseMatrix,
}

/// Test gradients expressed in the eigenbasis of a [`FimContext`].
///
/// With `c = coords[t]`, `(F+λI)⁻¹` acts on the test gradient as
/// `c_r / (μ_r + λ)` and `∇fᵀ F (F+λI)^{-k} ∇f = Σ_r weights[t][r] / (μ_r+λ)^k`.
#[derive(Clone, Debug)]
pub struct TestCoords {
    pub coords: DenseMatrix,
    pub weights: DenseMatrix,
    /// Squared norm of each (projected) test gradient.
    pub sq_norms: Vec<f64>,
}

impl FimContext {
    /// Builds the context; the mode defaults to dual iff `n` is below the
    /// (projected) gradient dimension.
    pub fn new(jac: DenseMatrix, projection: Option<DenseMatrix>, mode: Option<FimMode>) -> Result<Self> {
        let jac = match &projection {
            Some(p) => {
                if p.rows() != jac.cols() {
                    return Err(Error::Domain(format!(
                        "projection has {} rows but gradients have {} entries",
                        p.rows(),
                        jac.cols()
                    )));
                }
                project_rows(&jac, p)?
            }
            None => jac,
        };
        let (n, dim) = jac.shape();
        if n == 0 || dim == 0 {
            return Err(Error::Dimension("empty gradient matrix".into()));
        }
        let mode = mode.unwrap_or(if n < dim { FimMode::Dual } else { FimMode::Primal });
        let inv_n = 1.0 / n as f64;
        let (eig, left) = match mode {
            FimMode::Primal => {
                let eig = sym_eig(&jac.gram().scale(inv_n))?;
                let left = jac.matmul(eig.vectors())?;
                (eig, left)
            }
            FimMode::Dual => {
                let eig = sym_eig(&jac.outer_gram().scale(inv_n))?;
                let left = eig.vectors().clone();
                (eig, left)
            }
        };
        Ok(Self {
            jac,
            eig,
            mode,
            projection,
            left,
        })
    }

    /// Context on the loss gradients of `data` at `ckpt`.
    pub fn from_checkpoint(ckpt: &Checkpoint, data: &Dataset, projection: Option<DenseMatrix>) -> Result<Self> {
        Self::new(per_example_grads(ckpt, data)?, projection, None)
    }

    pub fn n(&self) -> usize {
        self.jac.rows()
    }

    /// Gradient dimension after projection.
    pub fn dim(&self) -> usize {
        self.jac.cols()
    }

    pub fn mode(&self) -> FimMode {
        self.mode
    }

    pub fn eig(&self) -> &SymEig {
        &self.eig
    }

    /// The (projected) gradient rows.
    pub fn jacobian(&self) -> &DenseMatrix {
        &self.jac
    }

    pub fn projection(&self) -> Option<&DenseMatrix> {
        self.projection.as_ref()
    }

    /// Eigenvalues of `F` above the clamping floor; identical in both modes.
    pub fn spectrum(&self) -> Vec<f64> {
        self.eig.nonzero_values()
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eig.max_value()
    }

    /// Applies the context's projection (if any) to raw gradient rows.
    pub fn project(&self, grads: &DenseMatrix) -> Result<DenseMatrix> {
        match &self.projection {
            Some(p) => {
                if grads.cols() != p.rows() {
                    return Err(Error::Domain(format!(
                        "gradients have {} entries, projection expects {}",
                        grads.cols(),
                        p.rows()
                    )));
                }
                project_rows(grads, p)
            }
            None => {
                if grads.cols() != self.dim() {
                    return Err(Error::Dimension(format!(
                        "gradients have {} entries, context has dimension {}",
                        grads.cols(),
                        self.dim()
                    )));
                }
                Ok(grads.clone())
            }
        }
    }

    /// Eigenbasis coordinates of raw (unprojected) test gradients.
    pub fn test_coords(&self, grads: &DenseMatrix) -> Result<TestCoords> {
        let g = self.project(grads)?;
        let mu = self.eig.values();
        // directions at roundoff level carry no weight in F
        let floor = CLAMP_REL * self.eig.max_value();
        let live = |r: usize| if mu[r] > floor { 1.0 } else { 0.0 };
        let (coords, weights) = match self.mode {
            FimMode::Primal => {
                let c = g.matmul(self.eig.vectors())?;
                let w = DenseMatrix::from_fn(c.rows(), c.cols(), |t, r| c.get(t, r).powi(2) * mu[r] * live(r));
                (c, w)
            }
            FimMode::Dual => {
                // b = Uᵀ J ∇f; ∇fᵀ F (F+λ)^{-k} ∇f = (1/n) Σ b_r² / (μ_r+λ)^k
                let jg = g.matmul_tr(&self.jac)?;
                let b = jg.matmul(self.eig.vectors())?;
                let inv_n = 1.0 / self.n() as f64;
                let w = DenseMatrix::from_fn(b.rows(), b.cols(), |t, r| b.get(t, r).powi(2) * inv_n * live(r));
                (b, w)
            }
        };
        let sq_norms = g.row_iter().map(|r| crate::tensor::dot(r, r)).collect();
        Ok(TestCoords {
            coords,
            weights,
            sq_norms,
        })
    }

    /// `scores[t][i] = −∇f_tᵀ (F+λI)⁻¹ J_i` from precomputed coordinates.
    pub fn iffim_scores(&self, tc: &TestCoords, lambda: f64) -> Result<DenseMatrix> {
        check_lambda(lambda)?;
        let mu = self.eig.values();
        let c = &tc.coords;
        let scaled = DenseMatrix::from_fn(c.rows(), c.cols(), |t, r| -c.get(t, r) / (mu[r] + lambda));
        scaled.matmul_tr(&self.left)
    }

    /// Rows of `G (F+λI)⁻¹` for (projected) rows `G`. `λ = 0` is allowed only
    /// when `F` is numerically nonsingular in primal mode.
    pub fn resolvent_rows(&self, g: &DenseMatrix, lambda: f64) -> Result<DenseMatrix> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::Domain(format!("regularization must be >= 0, got {lambda}")));
        }
        let mu = self.eig.values();
        let mu_max = self.eig.max_value();
        if lambda == 0.0 {
            let mu_min = mu.iter().copied().fold(f64::INFINITY, f64::min);
            if self.mode == FimMode::Dual || !(mu_min > CLAMP_REL * mu_max) {
                return Err(Error::Conditioning(format!(
                    "middle matrix is singular (smallest eigenvalue {mu_min:e}); use a positive regularization"
                )));
            }
        }
        match self.mode {
            FimMode::Primal => {
                let v = self.eig.vectors();
                let c = g.matmul(v)?;
                let scaled = DenseMatrix::from_fn(c.rows(), c.cols(), |t, r| c.get(t, r) / (mu[r] + lambda));
                scaled.matmul_tr(v)
            }
            FimMode::Dual => {
                // (F+λ)⁻¹ = (1/λ)(I − (1/n) Jᵀ (K+λ)⁻¹ J)
                let u = self.eig.vectors();
                let inv_n = 1.0 / self.n() as f64;
                let b = g.matmul_tr(&self.jac)?.matmul(u)?;
                let scaled =
                    DenseMatrix::from_fn(b.rows(), b.cols(), |t, r| b.get(t, r) * inv_n / (mu[r] + lambda));
                let correction = scaled.matmul_tr(u)?.matmul(&self.jac)?;
                Ok(g.sub(&correction)?.scale(1.0 / lambda))
            }
        }
    }
}
