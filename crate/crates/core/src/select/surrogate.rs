use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attrib::{FimContext, TestCoords};
use crate::error::{Error, Result};
use crate::eval::{check_signal, OracleQuantities};
use crate::tensor::{check_lambda, DenseMatrix, SymEig};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// `t_k = ∇fᵀ(F+λI)⁻ᵏF∇f` for k = 1, 2, 3.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TValues {
    pub lambda: f64,
    pub test: usize,
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
}

impl TValues {
    /// From spectral weights `ω_r` with `t_k = Σ ω_r / (μ_r+λ)^k`.
    pub fn from_weights(weights: &[f64], mu: &[f64], lambda: f64, test: usize) -> Self {
        let (mut t1, mut t2, mut t3) = (0.0, 0.0, 0.0);
        for (w, m) in weights.iter().zip(mu) {
            let inv = 1.0 / (m + lambda);
            let a = w * inv;
            t1 += a;
            t2 += a * inv;
            t3 += a * inv * inv;
        }
        Self {
            lambda,
            test,
            t1,
            t2,
            t3,
        }
    }
}

/// t-values from an eigendecomposition of `F` itself (primal route).
pub fn t_values(eig: &SymEig, grad_f: &[f64], lambda: f64) -> Result<TValues> {
    check_lambda(lambda)?;
    let w = eig.coords(grad_f)?;
    let weights: Vec<f64> = w.iter().zip(eig.values()).map(|(c, m)| c * c * m).collect();
    if !(weights.iter().sum::<f64>() > 0.0) {
        return Err(Error::Degenerate("F∇f vanishes".into()));
    }
    Ok(TValues::from_weights(&weights, eig.values(), lambda, 0))
}

/// `ξ = t₂ / √(t₁·t₃)`.
pub fn xi(t: &TValues) -> Result<f64> {
    if !(t.t1 > 0.0 && t.t3 > 0.0) {
        return Err(Error::Degenerate(format!(
            "ξ undefined with t1 = {:e}, t3 = {:e}",
            t.t1, t.t3
        )));
    }
    Ok(t.t2 / (t.t1 * t.t3).sqrt())
}

/// Test gradients prepared once against a [`FimContext`]; every λ after that
/// costs `O(|T|·r)`.
#[derive(Clone, Debug)]
pub struct Surrogate<'a> {
    ctx: &'a FimContext,
    coords: TestCoords,
    usable: Vec<bool>,
}

impl<'a> Surrogate<'a> {
    /// `grads_f` holds raw (unprojected) test output gradients as rows.
    pub fn new(ctx: &'a FimContext, grads_f: &DenseMatrix) -> Result<Self> {
        let coords = ctx.test_coords(grads_f)?;
        let usable = (0..grads_f.rows())
            .map(|t| check_signal(ctx, coords.weights.row(t), coords.sq_norms[t]).is_ok())
            .collect();
        Ok(Self { ctx, coords, usable })
    }

    pub fn n_test(&self) -> usize {
        self.usable.len()
    }

    /// Test points whose gradient carries no signal in `F`.
    pub fn skipped(&self) -> usize {
        self.usable.iter().filter(|u| !**u).count()
    }

    pub fn is_usable(&self, t: usize) -> bool {
        self.usable[t]
    }

    pub fn coords(&self) -> &TestCoords {
        &self.coords
    }

    pub fn t_values(&self, t: usize, lambda: f64) -> Result<TValues> {
        check_lambda(lambda)?;
        if !self.usable[t] {
            return Err(Error::Degenerate(format!("test point {t} has F∇f ≈ 0")));
        }
        Ok(TValues::from_weights(
            self.coords.weights.row(t),
            self.ctx.eig().values(),
            lambda,
            t,
        ))
    }

    /// ξ for test point `t`, `None` when skipped.
    pub fn xi(&self, t: usize, lambda: f64) -> Result<Option<f64>> {
        match self.t_values(t, lambda).and_then(|tv| xi(&tv)) {
            Ok(v) => Ok(Some(v)),
            Err(Error::Degenerate(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Mean ξ over non-skipped points and the number skipped at this λ.
    pub fn xi_bar(&self, lambda: f64) -> Result<(f64, usize)> {
        let mut sum = 0.0;
        let mut used = 0;
        for t in 0..self.n_test() {
            if let Some(v) = self.xi(t, lambda)? {
                sum += v;
                used += 1;
            }
        }
        if used == 0 {
            return Err(Error::Degenerate(
                "every validation point is degenerate; ξ̄ is undefined".into(),
            ));
        }
        Ok((sum / used as f64, self.n_test() - used))
    }

    /// ξ over the grid and the λ̂ of the selection rule.
    pub fn report(&self, grid: &[f64], threshold: f64) -> Result<SurrogateReport> {
        let cols: Vec<(Vec<Option<f64>>, f64, usize)> = grid
            .par_iter()
            .map(|&l| {
                let col = (0..self.n_test())
                    .map(|t| self.xi(t, l))
                    .collect::<Result<Vec<_>>>()?;
                let (bar, skipped) = self.xi_bar(l)?;
                Ok((col, bar, skipped))
            })
            .collect::<Result<_>>()?;
        let xi_bar: Vec<f64> = cols.iter().map(|c| c.1).collect();
        let skipped: Vec<usize> = cols.iter().map(|c| c.2).collect();
        let xi = (0..self.n_test())
            .map(|t| cols.iter().map(|c| c.0[t]).collect())
            .collect();
        let (index, lambda_hat) = select_lambda(grid, &xi_bar, threshold)?;
        Ok(SurrogateReport {
            grid: grid.to_vec(),
            xi,
            xi_bar,
            skipped,
            lambda_hat,
            hat_index: index,
            threshold,
        })
    }
}

/// ξ̄ at one λ for raw test gradients.
pub fn xi_bar(ctx: &FimContext, grads_f: &DenseMatrix, lambda: f64) -> Result<f64> {
    Surrogate::new(ctx, grads_f)?.xi_bar(lambda).map(|(v, _)| v)
}

/// Surrogate indicator over a λ grid together with the selected λ̂.
#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateReport {
    pub grid: Vec<f64>,
    /// `xi[t][k]`: ξ of test point `t` at `grid[k]`, `None` when skipped.
    pub xi: Vec<Vec<Option<f64>>>,
    pub xi_bar: Vec<f64>,
    pub skipped: Vec<usize>,
    pub lambda_hat: f64,
    pub hat_index: usize,
    pub threshold: f64,
}

impl SurrogateReport {
    /// CSV with columns `lambda,xi_bar,skipped`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda,xi_bar,skipped\n");
        for ((l, x), s) in self.grid.iter().zip(&self.xi_bar).zip(&self.skipped) {
            out.push_str(&format!("{l},{x},{s}\n"));
        }
        out
    }

    /// Grid indices where ξ̄ decreases by more than `slack` from one λ to the next.
    pub fn monotonicity_violations(&self, slack: f64) -> Vec<usize> {
        self.xi_bar
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[1] < w[0] - slack)
            .map(|(k, _)| k + 1)
            .collect()
    }
}

/// `argmin_k |ξ̄_k − threshold|`, ties toward the smaller λ.
pub fn select_lambda(grid: &[f64], xi_bar: &[f64], threshold: f64) -> Result<(usize, f64)> {
    if grid.is_empty() {
        return Err(Error::Domain("candidate grid is empty".into()));
    }
    if grid.len() != xi_bar.len() {
        return Err(Error::Dimension(format!(
            "{} candidates but {} ξ̄ values",
            grid.len(),
            xi_bar.len()
        )));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Domain(format!("threshold must lie in (0, 1), got {threshold}")));
    }
    let mut best = 0;
    for k in 1..grid.len() {
        let (dk, db) = ((xi_bar[k] - threshold).abs(), (xi_bar[best] - threshold).abs());
        if dk < db || (dk == db && grid[k] < grid[best]) {
            best = k;
        }
    }
    Ok((best, grid[best]))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConditionStatus {
    Met,
    NotMet,
    /// `r ≤ 0`: the bound framework does not apply.
    Inconclusive,
}

/// Both sides of the sufficient condition for a positive LDS derivative.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub lambda: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub r_positive: bool,
    pub condition: ConditionStatus,
}

pub fn sufficient_condition_diagnostic(oracle: &OracleQuantities, t: &TValues) -> Result<Diagnostic> {
    let scale = oracle.lambda.abs().max(t.lambda.abs());
    if (oracle.lambda - t.lambda).abs() > 1e-12 * scale {
        return Err(Error::Domain(format!(
            "oracle at λ = {} but t-values at λ = {}",
            oracle.lambda, t.lambda
        )));
    }
    let rhs = xi(t)?;
    let r_positive = oracle.r > 0.0;
    let condition = if !r_positive {
        ConditionStatus::Inconclusive
    } else if oracle.lhs > rhs {
        ConditionStatus::Met
    } else {
        ConditionStatus::NotMet
    };
    Ok(Diagnostic {
        lambda: t.lambda,
        lhs: oracle.lhs,
        rhs,
        r_positive,
        condition,
    })
}
