//! Report files. Every file is fully determined by the config and seed.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use attune_core::tensor::io::write_atomic;
use serde_json::Value;

use crate::error::Result;

/// Version stamped into every JSON report.
pub const SCHEMA_VERSION: u32 = 1;

pub const LDS_CURVE_HEADER: &str = "lambda,lds_mean,lds_stderr,xi_bar,skipped";
pub const QUANTILES_HEADER: &str = "percent,lambda,lds_mean,lds_stderr";
pub const DIAGNOSE_HEADER: &str = "test_index,lambda,r,o,t1,lhs,rhs,condition,c_p,c_p_next,fd_positive";

/// Shown under `--help`.
pub const OUTPUT_HELP: &str = "\
OUTPUT FILES (under output-dir; empty CSV fields are undefined values)
  data/{train,test}.{atrm,labels,json}   gen-data: features, labels, metadata
  checkpoints/final.atck, epoch_NNN.atck train: parameters
  train_summary.json                     train: losses, step sizes, gradient norm
  plan.json, retrain_outputs.atrm        retrain: subsets and s x |T| outputs
  attribution.{atrm,json}                attribute: |T| x n scores and metadata
  lds.csv                                evaluate-lds: test_index,spearman,excluded_flag
  lds_summary.json                       evaluate-lds: mean, stderr, s, a, seed, lambda
  surrogate.csv                          select-lambda: lambda,xi_bar,skipped
  selection.json                         select-lambda and lambda-only sweeps:
                                         lambda_hat, threshold, grid_spec, grid, seed,
                                         quantiles, partial
  lds_curve.csv                          lambda-only sweep: lambda,lds_mean,lds_stderr,xi_bar,skipped
  quantiles.csv                          lambda-only sweep: percent,lambda,lds_mean,lds_stderr
  sweep_summary.csv                      sweep: cell,<axis names...>,lambda,lds_mean,lds_stderr,excluded,status
  sweep_summary.json                     sweep: axes, cell count, partial flag
  cells/cell_NNNN.{csv,json}             sweep: per-cell test_index,spearman,excluded_flag and summary
  diagnose.csv                           diagnose: test_index,lambda,r,o,t1,lhs,rhs,condition,
                                         c_p,c_p_next,fd_positive
  diagnose_summary.json                  diagnose: counts of met conditions and agreements

EXIT CODES
  0 success, 1 i/o or file-format failure, 2 config error, 3 capability error, 4 numerical error

ENVIRONMENT
  ATTUNE_CACHE_DIR   retrain cache location (default <output-dir>/cache)
  RUST_LOG           log filter (default info)";

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

pub fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

/// A CSV field: shortest round-trip form, empty when undefined.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        String::new()
    }
}

pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// JSON number, `null` when not finite.
pub fn jnum(v: f64) -> Value {
    if v.is_finite() {
        Value::from(v)
    } else {
        Value::Null
    }
}

/// Row of the LDS-versus-λ curve.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveRow {
    pub lambda: f64,
    pub lds_mean: f64,
    pub lds_stderr: f64,
    pub xi_bar: Option<f64>,
    pub skipped: Option<usize>,
}

pub fn curve_csv(rows: &[CurveRow]) -> String {
    let mut out = format!("{LDS_CURVE_HEADER}\n");
    for r in rows {
        let skipped = r.skipped.map(|s| s.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            num(r.lambda),
            num(r.lds_mean),
            num(r.lds_stderr),
            opt(r.xi_bar),
            skipped
        );
    }
    out
}

/// LDS at a spectrum-quantile λ.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantileRow {
    pub percent: f64,
    pub lambda: f64,
    pub lds_mean: f64,
    pub lds_stderr: f64,
}

pub fn quantiles_csv(rows: &[QuantileRow]) -> String {
    let mut out = format!("{QUANTILES_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.percent,
            num(r.lambda),
            num(r.lds_mean),
            num(r.lds_stderr)
        );
    }
    out
}
