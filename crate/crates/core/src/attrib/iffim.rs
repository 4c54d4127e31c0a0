use super::fim::FimContext;
use super::record::AttributionMatrix;
use crate::error::{Error, Result};
use crate::tensor::{DenseMatrix, PROJECTION_FAMILY};

/// `τ(z′, z_i) = −∇f(z′)ᵀ (F_S + λI)⁻¹ ∇L(z_i)`. When the context carries a
/// projection `P`, every gradient is replaced by `Pᵀ∇`.
pub fn iffim(ctx: &FimContext, grads_f_test: &DenseMatrix, lambda: f64) -> Result<AttributionMatrix> {
    let tc = ctx.test_coords(grads_f_test)?;
    let scores = ctx.iffim_scores(&tc, lambda)?;
    let id = if ctx.projection().is_some() {
        "iffim-projected"
    } else {
        "iffim"
    };
    let mut m = AttributionMatrix::new(scores, id)?.with_param("lambda", lambda);
    if ctx.projection().is_some() {
        m = m
            .with_param("projection-dim", ctx.dim())
            .with_param("projection-family", PROJECTION_FAMILY);
    }
    Ok(m)
}

/// [`iffim`] on a context that must carry a projection.
pub fn iffim_projected(ctx: &FimContext, grads_f_test: &DenseMatrix, lambda: f64) -> Result<AttributionMatrix> {
    if ctx.projection().is_none() {
        return Err(Error::Domain("projected IFFIM needs a context built with a projection".into()));
    }
    iffim(ctx, grads_f_test, lambda)
}
