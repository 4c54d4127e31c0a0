use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::SymEig;

pub const DEFAULT_GRID_POINTS: usize = 25;

/// Candidate λ values for a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GridSpec {
    /// Log-spaced over `[max(μ_min·1e−2, 1e−12·μ_max), μ_max·1e2]` of the nonzero spectrum.
    Auto {
        #[serde(default = "default_points")]
        points: usize,
    },
    /// Log-spaced over `[lo, hi]`.
    LogRange { lo: f64, hi: f64, points: usize },
    Explicit { values: Vec<f64> },
}

fn default_points() -> usize {
    DEFAULT_GRID_POINTS
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::Auto {
            points: DEFAULT_GRID_POINTS,
        }
    }
}

impl GridSpec {
    /// Ascending grid; `spectrum` is only consulted for `Auto`.
    pub fn resolve(&self, spectrum: &[f64]) -> Result<Vec<f64>> {
        let grid = match self {
            GridSpec::Auto { points } => auto_grid(spectrum, *points)?,
            GridSpec::LogRange { lo, hi, points } => log_space(*lo, *hi, *points)?,
            GridSpec::Explicit { values } => {
                let mut v = values.clone();
                v.sort_by(f64::total_cmp);
                v.dedup();
                v
            }
        };
        if grid.is_empty() {
            return Err(Error::Domain("candidate grid is empty".into()));
        }
        if grid.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::Domain("candidate λ values must be positive and finite".into()));
        }
        Ok(grid)
    }
}

/// `points` log-spaced values from `lo` to `hi` inclusive.
pub fn log_space(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) || points == 0 {
        return Err(Error::Domain(format!(
            "log grid needs 0 < lo <= hi and points >= 1, got lo={lo}, hi={hi}, points={points}"
        )));
    }
    if points == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..points)
        .map(|i| {
            if i == points - 1 {
                hi
            } else {
                (a + (b - a) * i as f64 / (points - 1) as f64).exp()
            }
        })
        .collect())
}

/// Grid anchored to the nonzero spectrum of `F`.
pub fn auto_grid(spectrum: &[f64], points: usize) -> Result<Vec<f64>> {
    let nz: Vec<f64> = spectrum.iter().copied().filter(|&m| m > 0.0).collect();
    if nz.is_empty() {
        return Err(Error::Degenerate("spectrum has no nonzero eigenvalue".into()));
    }
    let max = nz.iter().copied().fold(0.0, f64::max);
    let min = nz.iter().copied().fold(f64::INFINITY, f64::min);
    log_space((min * 1e-2).max(1e-12 * max), max * 1e2, points)
}

/// Nearest-rank `q`-percent quantile of the nonzero eigenvalues, ascending.
pub fn spectrum_quantile(eig: &SymEig, q: f64) -> Result<f64> {
    quantile_nearest_rank(&eig.nonzero_values(), q)
}

pub fn quantile_nearest_rank(values: &[f64], q: f64) -> Result<f64> {
    if !(q > 0.0 && q <= 100.0) {
        return Err(Error::Domain(format!("quantile must lie in (0, 100], got {q}")));
    }
    let mut v: Vec<f64> = values.iter().copied().filter(|&m| m > 0.0).collect();
    if v.is_empty() {
        return Err(Error::Degenerate("spectrum has no nonzero eigenvalue".into()));
    }
    v.sort_by(f64::total_cmp);
    let rank = ((q / 100.0) * v.len() as f64 - 1e-9).ceil().max(1.0) as usize;
    Ok(v[rank.min(v.len()) - 1])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank() {
        let v = [5.0, 0.1, 10.0, 1.0, 2.0, 0.0];
        assert_eq!(quantile_nearest_rank(&v, 50.0).unwrap(), 2.0);
        assert_eq!(quantile_nearest_rank(&v, 90.0).unwrap(), 10.0);
        assert_eq!(quantile_nearest_rank(&v, 10.0).unwrap(), 0.1);
        assert!(quantile_nearest_rank(&[0.0, 0.0], 50.0).is_err());
    }

    #[test]
    fn auto_grid_bounds() {
        let g = auto_grid(&[4.0, 1e-3, 0.0], 25).unwrap();
        assert_eq!(g.len(), 25);
        assert!((g[0] - 1e-5).abs() < 1e-18);
        assert_eq!(g[24], 400.0);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        let g = auto_grid(&[1.0, 1e-20], 5).unwrap();
        assert!((g[0] - 1e-12).abs() < 1e-24);
    }
}
