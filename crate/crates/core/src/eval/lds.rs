use rayon::prelude::*;
use serde_json::json;

use super::stats::{mean_stderr, pearson, spearman};
use crate::attrib::AttributionMatrix;
use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::train::{Retrainer, SubsetOutputs, SubsetPlan};
use crate::tensor::DenseMatrix;

/// Largest training set for which every size-`a` subset is retrained.
pub const MAX_EXHAUSTIVE_N: usize = 12;

/// How undefined per-point correlations enter the summary.
pub const EXCLUSION_POLICY: &str =
    "points with constant scores or constant retrain outputs are excluded from mean and stderr";

/// Per-test-point Linear Datamodeling Scores. Points whose correlation is
/// undefined are `None`, excluded from the mean and counted.
#[derive(Clone, Debug, PartialEq)]
pub struct LdsReport {
    pub scores: Vec<Option<f64>>,
    pub mean: f64,
    pub stderr: f64,
    pub s: usize,
    pub a: usize,
    pub attributor: String,
}

impl LdsReport {
    fn from_scores(scores: Vec<Option<f64>>, s: usize, a: usize, attributor: &str) -> Self {
        let valid: Vec<f64> = scores.iter().flatten().copied().collect();
        let (mean, stderr) = mean_stderr(&valid);
        Self {
            scores,
            mean,
            stderr,
            s,
            a,
            attributor: attributor.to_string(),
        }
    }

    pub fn excluded(&self) -> usize {
        self.scores.iter().filter(|s| s.is_none()).count()
    }

    /// CSV with columns `test_index,spearman,excluded_flag`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("test_index,spearman,excluded_flag\n");
        for (t, s) in self.scores.iter().enumerate() {
            match s {
                Some(v) => out.push_str(&format!("{t},{v},0\n")),
                None => out.push_str(&format!("{t},,1\n")),
            }
        }
        out
    }

    pub fn summary_json(&self, seed: u64) -> serde_json::Value {
        json!({
            "mean": finite_or_null(self.mean),
            "stderr": finite_or_null(self.stderr),
            "s": self.s,
            "a": self.a,
            "seed": seed,
            "excluded": self.excluded(),
            "attributor-id": self.attributor,
            "exclusion": EXCLUSION_POLICY,
        })
    }
}

fn finite_or_null(v: f64) -> serde_json::Value {
    if v.is_finite() {
        json!(v)
    } else {
        serde_json::Value::Null
    }
}

/// `s × |T|` matrix of additive subset predictions `Σ_{i∈A_j} τ(z′_t, z_i)`.
pub fn subset_sums(scores: &DenseMatrix, plan: &SubsetPlan) -> Result<DenseMatrix> {
    if scores.cols() != plan.n {
        return Err(Error::Dimension(format!(
            "attributions cover {} training points, plan covers {}",
            scores.cols(),
            plan.n
        )));
    }
    let mut mask = DenseMatrix::zeros(plan.s(), plan.n);
    for (j, subset) in plan.subsets.iter().enumerate() {
        for &i in subset {
            mask.set(j, i, 1.0);
        }
    }
    mask.matmul_tr(scores)
}

fn per_point<F>(scores: &DenseMatrix, plan: &SubsetPlan, outputs: &DenseMatrix, corr: F) -> Result<Vec<Option<f64>>>
where
    F: Fn(&[f64], &[f64]) -> Result<f64> + Sync,
{
    if outputs.shape() != (plan.s(), scores.rows()) {
        return Err(Error::Dimension(format!(
            "outputs are {}x{}, expected {}x{}",
            outputs.rows(),
            outputs.cols(),
            plan.s(),
            scores.rows()
        )));
    }
    let sums = subset_sums(scores, plan)?;
    (0..scores.rows())
        .into_par_iter()
        .map(|t| match corr(&outputs.column(t), &sums.column(t)) {
            Ok(v) => Ok(Some(v)),
            Err(Error::UndefinedCorrelation(_)) => Ok(None),
            Err(e) => Err(e),
        })
        .collect()
}

/// Spearman LDS of raw scores against retrained outputs.
pub fn lds_scores(
    scores: &DenseMatrix,
    plan: &SubsetPlan,
    outputs: &DenseMatrix,
    attributor: &str,
) -> Result<LdsReport> {
    if plan.s() < 3 {
        return Err(Error::Domain(format!("LDS needs at least 3 subsets, got {}", plan.s())));
    }
    let scores = per_point(scores, plan, outputs, spearman)?;
    Ok(LdsReport::from_scores(scores, plan.s(), plan.a, attributor))
}

pub fn lds(attr: &AttributionMatrix, outs: &SubsetOutputs) -> Result<LdsReport> {
    lds_scores(&attr.scores, &outs.plan, &outs.outputs, &attr.attributor)
}

/// Pearson variant of the LDS over the subsets of `plan`.
pub fn pearson_lds(scores: &DenseMatrix, plan: &SubsetPlan, outputs: &DenseMatrix) -> Result<Vec<Option<f64>>> {
    per_point(scores, plan, outputs, pearson)
}

/// Exact population Pearson LDS from retraining on every size-`a` subset.
#[derive(Clone, Debug)]
pub struct PopulationLds {
    pub c_p: Vec<Option<f64>>,
    pub outputs: SubsetOutputs,
    pub retrains: usize,
}

pub fn population_pearson_lds_oracle(
    retrainer: &Retrainer<'_>,
    a: usize,
    attr: &AttributionMatrix,
    test: &Dataset,
) -> Result<PopulationLds> {
    let n = retrainer.data().len();
    if n > MAX_EXHAUSTIVE_N {
        return Err(Error::Capability(format!(
            "exhaustive enumeration is limited to n <= {MAX_EXHAUSTIVE_N}, got n = {n}"
        )));
    }
    let plan = SubsetPlan::exhaustive(n, a)?;
    let (outputs, stats) = retrainer.run(&plan, test)?;
    let c_p = pearson_lds(&attr.scores, &plan, &outputs.outputs)?;
    Ok(PopulationLds {
        c_p,
        outputs,
        retrains: stats.trained + stats.cache_hits,
    })
}
