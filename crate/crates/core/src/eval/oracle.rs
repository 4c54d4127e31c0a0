use crate::attrib::{FimContext, FimMode};
use crate::error::{Error, Result};
use crate::tensor::{check_lambda, dot, DenseMatrix, CLAMP_REL};
use crate::train::{SubsetOutputs, SubsetPlan};

/// Test points with `∇fᵀF∇f ≤ DEGENERATE_REL · μ_max · ‖∇f‖²` carry no signal in `F`.
pub const DEGENERATE_REL: f64 = 1e-14;

/// `α_i = E[f | i ∈ A] − E[f]` for one test point.
#[derive(Clone, Debug, PartialEq)]
pub struct AlphaVector {
    pub alpha: Vec<f64>,
    /// Number of subsets containing each index.
    pub counts: Vec<usize>,
    pub mean_output: f64,
}

/// α from the outputs `f(z′, θ*_{A_j})` of every subset in `plan`. With an
/// exhaustive plan the result is exact; otherwise it is a Monte-Carlo estimate.
pub fn alpha_from(plan: &SubsetPlan, outputs: &[f64]) -> Result<AlphaVector> {
    if outputs.len() != plan.s() {
        return Err(Error::Dimension(format!(
            "{} outputs for {} subsets",
            outputs.len(),
            plan.s()
        )));
    }
    let mean_output = outputs.iter().sum::<f64>() / plan.s() as f64;
    let mut sums = vec![0.0; plan.n];
    let mut counts = vec![0usize; plan.n];
    for (subset, &f) in plan.subsets.iter().zip(outputs) {
        for &i in subset {
            sums[i] += f;
            counts[i] += 1;
        }
    }
    if let Some(index) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Coverage { index });
    }
    let alpha = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| s / c as f64 - mean_output)
        .collect();
    Ok(AlphaVector {
        alpha,
        counts,
        mean_output,
    })
}

/// α for test point `t` of retrained outputs.
pub fn alpha_vector(outs: &SubsetOutputs, t: usize) -> Result<AlphaVector> {
    if t >= outs.outputs.cols() {
        return Err(Error::Dimension(format!(
            "test index {t} out of range for {} test points",
            outs.outputs.cols()
        )));
    }
    alpha_from(&outs.plan, &outs.outputs.column(t))
}

/// The quantities entering the sufficient condition for a positive LDS derivative.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleQuantities {
    pub lambda: f64,
    /// `g = (1/n) Jᵀα`.
    pub g: Vec<f64>,
    /// `r = −∇fᵀ(F+λI)⁻¹g`.
    pub r: f64,
    /// `o = (1/n) αᵀ((1/n)JJᵀ + λI)⁻¹α`.
    pub o: f64,
    /// `t₁ = ∇fᵀ(F+λI)⁻¹F∇f`.
    pub t1: f64,
    /// `r / √(o·t₁)`.
    pub lhs: f64,
}

/// Fails with a degenerate-point error when `∇f` carries no weight in `F`.
pub(crate) fn check_signal(ctx: &FimContext, weights: &[f64], sq_norm: f64) -> Result<()> {
    let signal: f64 = weights.iter().sum();
    if !(signal > DEGENERATE_REL * ctx.max_eigenvalue() * sq_norm) {
        return Err(Error::Degenerate(format!(
            "test gradient has ∇fᵀF∇f = {signal:e}, below the degeneracy floor"
        )));
    }
    Ok(())
}

/// Evaluates `g, r, o, t₁` and the left-hand side for one raw test gradient.
/// All gradients go through the context's projection when it has one.
pub fn oracle_lhs(alpha: &[f64], ctx: &FimContext, grad_f: &[f64], lambda: f64) -> Result<OracleQuantities> {
    check_lambda(lambda)?;
    let n = ctx.n();
    if alpha.len() != n {
        return Err(Error::Dimension(format!("alpha has {} entries, n = {n}", alpha.len())));
    }
    let jac = ctx.jacobian();
    let g: Vec<f64> = jac.tr_matvec(alpha)?.into_iter().map(|v| v / n as f64).collect();

    let gf = DenseMatrix::new(1, grad_f.len(), grad_f.to_vec())?;
    let tc = ctx.test_coords(&gf)?;
    let weights = tc.weights.row(0);
    check_signal(ctx, weights, tc.sq_norms[0])?;
    let mu = ctx.eig().values();
    let t1: f64 = weights.iter().zip(mu).map(|(w, m)| w / (m + lambda)).sum();

    let gf_proj = ctx.project(&gf)?;
    let solved = ctx.resolvent_rows(&gf_proj, lambda)?;
    let r = -dot(solved.row(0), &g);

    let o = match ctx.mode() {
        FimMode::Dual => {
            let c = ctx.eig().coords(alpha)?;
            c.iter().zip(mu).map(|(ci, m)| ci * ci / (m + lambda)).sum::<f64>() / n as f64
        }
        FimMode::Primal => {
            // left = J V has columns √(nμ_r)·u_r; α splits into range(J) and its complement
            let left = jac.matmul(ctx.eig().vectors())?;
            let proj = left.tr_matvec(alpha)?;
            let floor = CLAMP_REL * ctx.max_eigenvalue();
            let (mut in_range, mut captured) = (0.0, 0.0);
            for (pr, &m) in proj.iter().zip(mu) {
                if m > floor {
                    let c2 = pr * pr / (n as f64 * m);
                    in_range += c2 / (m + lambda);
                    captured += c2;
                }
            }
            let rest = (dot(alpha, alpha) - captured).max(0.0);
            (in_range + rest / lambda) / n as f64
        }
    };
    let lhs = r / (o * t1).sqrt();
    Ok(OracleQuantities {
        lambda,
        g,
        r,
        o,
        t1,
        lhs,
    })
}
