use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::record::AttributionMatrix;
use crate::error::{Error, Result};
use crate::model::{batch_hvp, output_grads, per_example_grads, risk_hessian, risk_hvp, Checkpoint, Dataset};
use crate::tensor::{axpy, check_lambda, dot, norm2, DenseMatrix, SeededRng};

/// Largest parameter block for which a dense Hessian is formed.
pub const MAX_EXPLICIT_PARAMS: usize = 2048;

/// LiSSA iterates with a larger norm are treated as divergent.
pub const LISSA_DIVERGENCE_NORM: f64 = 1e12;

/// `−G (H + λI)⁻¹ Jᵀ` for test rows `G` and training rows `J`.
pub fn explicit_scores(
    hessian: &DenseMatrix,
    lambda: f64,
    grads_f: &DenseMatrix,
    grads_loss: &DenseMatrix,
) -> Result<DenseMatrix> {
    let m = hessian.rows();
    if hessian.cols() != m || grads_f.cols() != m || grads_loss.cols() != m {
        return Err(Error::Dimension(format!(
            "Hessian {}x{}, test gradients {} wide, training gradients {} wide",
            hessian.rows(),
            hessian.cols(),
            grads_f.cols(),
            grads_loss.cols()
        )));
    }
    let mut a = DMatrix::from_row_slice(m, m, hessian.data());
    for i in 0..m {
        a[(i, i)] += lambda;
    }
    // columns of B are the test gradients
    let b = DMatrix::from_row_slice(grads_f.rows(), m, grads_f.data()).transpose();
    let x = match a.clone().cholesky() {
        Some(ch) => ch.solve(&b),
        None => a
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::Conditioning("H + λI is singular".into()))?,
    };
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Conditioning("H + λI solve produced non-finite values".into()));
    }
    let y = DenseMatrix::from_nalgebra(&x.transpose());
    Ok(y.matmul_tr(grads_loss)?.scale(-1.0))
}

/// Influence with the exact regularized Hessian of the training risk.
///
/// With `last_layer` only the output layer's parameters enter gradients and Hessian.
pub fn if_explicit(
    ckpt: &Checkpoint,
    data: &Dataset,
    test: &Dataset,
    lambda: f64,
    last_layer: bool,
) -> Result<AttributionMatrix> {
    let spec = &ckpt.spec;
    let range = if last_layer {
        spec.last_layer()
    } else {
        0..spec.param_count()
    };
    if range.len() > MAX_EXPLICIT_PARAMS {
        return Err(Error::Capability(format!(
            "explicit Hessian over {} parameters exceeds the {MAX_EXPLICIT_PARAMS} limit; use if-cg or if-lissa",
            range.len()
        )));
    }
    if spec.is_convex() {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::Domain(format!("regularization must be >= 0, got {lambda}")));
        }
    } else {
        check_lambda(lambda)?;
    }
    let h = risk_hessian(ckpt, data, range.clone())?;
    let j = per_example_grads(ckpt, data)?.select_cols(range.clone());
    let g = output_grads(ckpt, test)?.0.select_cols(range.clone());
    let scores = explicit_scores(&h, lambda, &g, &j)?;
    Ok(AttributionMatrix::new(scores, "if-explicit")?
        .with_param("lambda", lambda)
        .with_param("last-layer", last_layer)
        .with_checkpoint(ckpt.content_hash()))
}

/// Relative residual below which conjugate gradient stops early.
pub const CG_RESIDUAL_FLOOR: f64 = 1e-15;

/// Iterates and residual norms of a conjugate-gradient run.
#[derive(Clone, Debug)]
pub struct CgTrace {
    pub solution: Vec<f64>,
    /// `residual_norms[k]` is `‖b − A x_k‖`, starting from `x_0 = 0`.
    pub residual_norms: Vec<f64>,
}

/// Conjugate gradient on the operator `apply`, run for exactly
/// `max_iteration` steps unless the residual falls to roundoff level.
pub fn conjugate_gradient<F>(apply: F, b: &[f64], max_iteration: usize) -> Result<CgTrace>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if max_iteration == 0 {
        return Err(Error::Domain("max-iteration must be at least 1".into()));
    }
    let mut x = vec![0.0; b.len()];
    let mut r = b.to_vec();
    let mut d = r.clone();
    let mut rr = dot(&r, &r);
    let mut residual_norms = vec![rr.sqrt()];
    let floor = (CG_RESIDUAL_FLOOR * rr.sqrt()).powi(2);
    for _ in 0..max_iteration {
        if rr <= floor {
            break;
        }
        let ad = apply(&d)?;
        let dad = dot(&d, &ad);
        let alpha = rr / dad;
        axpy(alpha, &d, &mut x);
        axpy(-alpha, &ad, &mut r);
        let rr_new = dot(&r, &r);
        if !alpha.is_finite() || !rr_new.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Conditioning(
                "conjugate gradient produced a non-finite iterate".into(),
            ));
        }
        let beta = rr_new / rr;
        for (di, ri) in d.iter_mut().zip(&r) {
            *di = ri + beta * *di;
        }
        rr = rr_new;
        residual_norms.push(rr.sqrt());
    }
    Ok(CgTrace {
        solution: x,
        residual_norms,
    })
}

/// Influence with `(H + λI)⁻¹∇f` from conjugate gradient on Hessian-vector products.
pub fn if_cg(
    ckpt: &Checkpoint,
    data: &Dataset,
    test: &Dataset,
    lambda: f64,
    max_iteration: usize,
) -> Result<AttributionMatrix> {
    check_lambda(lambda)?;
    if max_iteration == 0 {
        return Err(Error::Domain("max-iteration must be at least 1".into()));
    }
    let g = output_grads(ckpt, test)?.0;
    let j = per_example_grads(ckpt, data)?;
    let solutions: Vec<Vec<f64>> = (0..g.rows())
        .into_par_iter()
        .map(|t| {
            let apply = |v: &[f64]| -> Result<Vec<f64>> {
                let mut hv = risk_hvp(ckpt, data, v)?;
                axpy(lambda, v, &mut hv);
                Ok(hv)
            };
            conjugate_gradient(apply, g.row(t), max_iteration).map(|c| c.solution)
        })
        .collect::<Result<_>>()?;
    let x = DenseMatrix::from_rows(&solutions)?;
    Ok(AttributionMatrix::new(x.matmul_tr(&j)?.scale(-1.0), "if-cg")?
        .with_param("lambda", lambda)
        .with_param("max-iteration", max_iteration)
        .with_checkpoint(ckpt.content_hash()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct LissaConfig {
    #[serde(default = "default_scaling")]
    pub scaling: f64,
    #[serde(default = "default_depth")]
    pub recursion_depth: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_scaling() -> f64 {
    5.0
}
fn default_depth() -> usize {
    1000
}
fn default_batch() -> usize {
    50
}

impl Default for LissaConfig {
    fn default() -> Self {
        Self {
            scaling: default_scaling(),
            recursion_depth: default_depth(),
            batch_size: default_batch(),
            seed: 0,
        }
    }
}

/// Runs `vᵗ = g + (I − (Hᵗ + λI)/η) vᵗ⁻¹` from `v⁰ = g` and returns `v^depth / η`,
/// an estimate of `(H + λI)⁻¹ g`. `hvp` is called once per step.
pub fn lissa_solve<F>(mut hvp: F, g: &[f64], lambda: f64, scaling: f64, depth: usize) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if !(scaling > 0.0) || !scaling.is_finite() {
        return Err(Error::Domain(format!("scaling must be positive, got {scaling}")));
    }
    let mut v = g.to_vec();
    for step in 1..=depth {
        let hv = hvp(&v)?;
        let next: Vec<f64> = g
            .iter()
            .zip(&v)
            .zip(&hv)
            .map(|((gi, vi), hvi)| gi + vi - (hvi + lambda * vi) / scaling)
            .collect();
        let nv = norm2(&next);
        if !(nv <= LISSA_DIVERGENCE_NORM) {
            return Err(Error::Divergence(format!(
                "LiSSA iterate norm {nv:e} exceeded {LISSA_DIVERGENCE_NORM:e} at step {step}; increase the scaling"
            )));
        }
        v = next;
    }
    Ok(v.into_iter().map(|x| x / scaling).collect())
}

/// Influence with the LiSSA estimate of `(H + λI)⁻¹∇f`; each step uses a
/// Hessian-vector product on `batch_size` examples drawn with replacement.
pub fn if_lissa(
    ckpt: &Checkpoint,
    data: &Dataset,
    test: &Dataset,
    lambda: f64,
    cfg: &LissaConfig,
) -> Result<AttributionMatrix> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Domain(format!("regularization must be >= 0, got {lambda}")));
    }
    if cfg.batch_size == 0 || cfg.recursion_depth == 0 {
        return Err(Error::Domain("LiSSA needs batch-size and recursion-depth >= 1".into()));
    }
    let n = data.len();
    let g = output_grads(ckpt, test)?.0;
    let j = per_example_grads(ckpt, data)?;
    let solutions: Vec<Vec<f64>> = (0..g.rows())
        .into_par_iter()
        .map(|t| {
            let mut rng = SeededRng::new(cfg.seed, t as u64);
            let mut idx = vec![0usize; cfg.batch_size];
            let hvp = |v: &[f64]| {
                for slot in idx.iter_mut() {
                    *slot = rng.below(n);
                }
                batch_hvp(ckpt, data, &idx, v)
            };
            lissa_solve(hvp, g.row(t), lambda, cfg.scaling, cfg.recursion_depth)
        })
        .collect::<Result<_>>()?;
    let x = DenseMatrix::from_rows(&solutions)?;
    Ok(AttributionMatrix::new(x.matmul_tr(&j)?.scale(-1.0), "if-lissa")?
        .with_param("lambda", lambda)
        .with_param("scaling", cfg.scaling)
        .with_param("recursion-depth", cfg.recursion_depth)
        .with_param("batch-size", cfg.batch_size)
        .with_param("seed", cfg.seed)
        .with_checkpoint(ckpt.content_hash()))
}
