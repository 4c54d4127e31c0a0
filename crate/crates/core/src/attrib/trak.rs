use super::fim::FimContext;
use super::record::AttributionMatrix;
use crate::error::{Error, Result};
use crate::model::{evaluate_all, output_grads, Checkpoint, Dataset};
use crate::tensor::{project_rows, DenseMatrix, PROJECTION_FAMILY};

#[derive(Clone, Debug, Default)]
pub struct TrakOptions {
    /// Weight the middle matrix by `R = diag(p_i(1−p_i))`. The practical
    /// variant leaves it out.
    pub use_r: bool,
    pub projection: Option<DenseMatrix>,
}

/// Middle matrix `M = (1/n) Φᵀ R Φ` (or `(1/n) ΦᵀΦ`) decomposed once, plus the
/// right factor rows `(1−p_i) Φ_i`. Gradients are projected before the
/// `(1−p_i)` factor is applied.
#[derive(Clone, Debug)]
pub struct TrakContext {
    middle: FimContext,
    right: DenseMatrix,
    projection: Option<DenseMatrix>,
    use_r: bool,
}

impl TrakContext {
    /// `phi` holds raw output gradients `∇f(z_i)` as rows and `probs` the
    /// correct-class probabilities `p_i`.
    pub fn new(phi: &DenseMatrix, probs: &[f64], opts: TrakOptions) -> Result<Self> {
        if probs.len() != phi.rows() {
            return Err(Error::Dimension(format!(
                "{} gradient rows but {} probabilities",
                phi.rows(),
                probs.len()
            )));
        }
        let phi = match &opts.projection {
            Some(p) => {
                if p.rows() != phi.cols() {
                    return Err(Error::Domain(format!(
                        "projection has {} rows but gradients have {} entries",
                        p.rows(),
                        phi.cols()
                    )));
                }
                project_rows(phi, p)?
            }
            None => phi.clone(),
        };
        let weight = |i: usize| {
            if opts.use_r {
                (probs[i] * (1.0 - probs[i])).sqrt()
            } else {
                1.0
            }
        };
        let a = DenseMatrix::from_fn(phi.rows(), phi.cols(), |i, j| weight(i) * phi.get(i, j));
        let right = DenseMatrix::from_fn(phi.rows(), phi.cols(), |i, j| (1.0 - probs[i]) * phi.get(i, j));
        Ok(Self {
            middle: FimContext::new(a, None, None)?,
            right,
            projection: opts.projection,
            use_r: opts.use_r,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, data: &Dataset, opts: TrakOptions) -> Result<Self> {
        let (phi, _) = output_grads(ckpt, data)?;
        let probs: Vec<f64> = evaluate_all(ckpt, data)?.iter().map(|e| e.prob).collect();
        Self::new(&phi, &probs, opts)
    }

    /// The decomposed middle matrix; its spectrum drives λ selection for TRAK.
    pub fn middle(&self) -> &FimContext {
        &self.middle
    }

    /// Projects raw test output gradients with the context's projection.
    pub fn project(&self, grads: &DenseMatrix) -> Result<DenseMatrix> {
        match &self.projection {
            Some(p) => project_rows(grads, p),
            None => Ok(grads.clone()),
        }
    }

    /// `τ(z′, z_i) = ∇f(z′)ᵀ (M + λI)⁻¹ ∇f(z_i) (1 − p_i)`.
    pub fn scores(&self, grads_f_test: &DenseMatrix, lambda: f64) -> Result<AttributionMatrix> {
        let g = self.project(grads_f_test)?;
        let x = self.middle.resolvent_rows(&g, lambda)?;
        let scores = x.matmul_tr(&self.right)?;
        let mut m = AttributionMatrix::new(scores, "trak")?
            .with_param("lambda", lambda)
            .with_param("use-r", self.use_r);
        if self.projection.is_some() {
            m = m
                .with_param("projection-dim", self.middle.dim())
                .with_param("projection-family", PROJECTION_FAMILY)
                .with_param("projection-order", "project-then-scale");
        }
        Ok(m)
    }
}

pub fn trak(
    ckpt: &Checkpoint,
    data: &Dataset,
    test: &Dataset,
    lambda: f64,
    opts: TrakOptions,
) -> Result<AttributionMatrix> {
    let ctx = TrakContext::from_checkpoint(ckpt, data, opts)?;
    let (g, _) = output_grads(ckpt, test)?;
    Ok(ctx.scores(&g, lambda)?.with_checkpoint(ckpt.content_hash()))
}
