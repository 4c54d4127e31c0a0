//! Grid search over attributor hyperparameters with one LDS report per cell.
//!
//! Subset retrains are shared by every cell. Cells that differ only in
//! regularization share one prepared attributor, so a λ-only sweep
//! decomposes a single matrix.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use attune_core::eval::{lds, LdsReport};
use attune_core::select::{Surrogate, SurrogateReport};
use attune_core::tensor::eig_call_count;
use attune_core::train::{RetrainStats, SubsetOutputs, TrainOutcome};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::commands::{quantile_lambdas, selection_json, warn_if_not_monotone};
use crate::config::{AttributorConfig, AxisValues, Regularization, SweepSpec};
use crate::error::{CliError, Result};
use crate::pipeline::{Pipeline, Prepared};
use crate::report::{
    curve_csv, jnum, num, quantiles_csv, write_json, write_text, CurveRow, QuantileRow, SCHEMA_VERSION,
};

#[derive(Clone, Debug)]
pub struct CellResult {
    pub index: usize,
    /// One entry per axis; grid axes hold the resolved λ.
    pub axis_values: Vec<Value>,
    pub lambda: Option<f64>,
    pub report: Option<LdsReport>,
    /// Numerical failure that left this cell without a report.
    pub error: Option<String>,
}

/// LDS and ξ̄ against λ for a sweep whose only axis is `regularization`.
#[derive(Clone, Debug)]
pub struct LambdaCurve {
    pub rows: Vec<CurveRow>,
    /// Surrogate over the curve's λ values; `None` when some λ is not positive.
    pub selection: Option<SurrogateReport>,
    pub quantiles: Vec<QuantileRow>,
}

impl LambdaCurve {
    pub fn lds_at(&self, lambda: f64) -> Option<f64> {
        self.rows.iter().find(|r| r.lambda == lambda).map(|r| r.lds_mean)
    }

    pub fn max_lds(&self) -> f64 {
        self.rows.iter().map(|r| r.lds_mean).filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub cells: Vec<CellResult>,
    pub curve: Option<LambdaCurve>,
    /// Eigendecompositions performed by this sweep.
    pub eig_calls: usize,
    pub retrain: RetrainStats,
    pub partial: bool,
}

/// How many cells a group evaluates and where they go.
struct Slot {
    index: usize,
    axis_values: Vec<Value>,
    reg: Option<RegChoice>,
}

#[derive(Clone, Copy)]
enum RegChoice {
    Fixed(Regularization),
    Grid(usize),
}

/// Runs every cell, writes the reports and returns what was computed.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepOutcome> {
    spec.validate()?;
    let names: Vec<&str> = spec.axes.iter().map(|a| a.name.as_str()).collect();
    let size = spec.product_size();
    eprintln!("sweep: {size} cells over {}", names.join(" x "));
    let eig_before = eig_call_count();

    let p = Pipeline::new(spec.base.clone())?;
    let run = p.fit()?;
    let plan = p.plan()?;
    let cache = p.cache()?;
    let (outs, retrain) = p.retrain(&run.checkpoint, &plan, Some(&cache))?;

    let values: Vec<AxisValues> = spec.axes.iter().map(|a| a.values()).collect::<Result<_>>()?;
    let reg_axis = names.iter().position(|&n| n == "regularization");
    let grid_points = crate::config::grid_len(&spec.base.grid);
    let radix: Vec<usize> = values
        .iter()
        .map(|v| match v {
            AxisValues::List(l) => l.len(),
            AxisValues::Grid => grid_points,
        })
        .collect();
    let mut stride = vec![1usize; radix.len()];
    for k in (0..radix.len().saturating_sub(1)).rev() {
        stride[k] = stride[k + 1] * radix[k + 1];
    }

    // every combination of the non-regularization axes is one group
    let others: Vec<usize> = (0..radix.len()).filter(|&k| Some(k) != reg_axis).collect();
    let group_count: usize = others.iter().map(|&k| radix[k]).product();
    let lambda_only = names == ["regularization"];

    let mut cells = Vec::with_capacity(size);
    let mut curve = None;
    for g in 0..group_count {
        let mut digits = vec![0usize; radix.len()];
        let mut rest = g;
        for &k in others.iter().rev() {
            digits[k] = rest % radix[k];
            rest /= radix[k];
        }
        let mut attr = spec.base.attributor.clone();
        for &k in &others {
            if let AxisValues::List(l) = &values[k] {
                attr = attr.with_key(names[k], &l[digits[k]])?;
            }
        }
        let reg_choices: Vec<Option<RegChoice>> = match reg_axis.map(|k| &values[k]) {
            None => vec![attr.regularization().map(RegChoice::Fixed)],
            Some(AxisValues::Grid) => (0..grid_points).map(|i| Some(RegChoice::Grid(i))).collect(),
            Some(AxisValues::List(l)) => l
                .iter()
                .map(|v| {
                    let a = attr.with_key("regularization", v)?;
                    Ok(a.regularization().map(RegChoice::Fixed))
                })
                .collect::<Result<_>>()?,
        };
        let slots: Vec<Slot> = reg_choices
            .into_iter()
            .enumerate()
            .map(|(i, reg)| {
                let mut d = digits.clone();
                if let Some(k) = reg_axis {
                    d[k] = i;
                }
                let axis_values = (0..radix.len())
                    .map(|k| match &values[k] {
                        AxisValues::List(l) => l[d[k]].clone(),
                        AxisValues::Grid => Value::Null,
                    })
                    .collect();
                Slot {
                    index: d.iter().zip(&stride).map(|(a, b)| a * b).sum(),
                    axis_values,
                    reg,
                }
            })
            .collect();
        let (group_cells, group_curve) = run_group(&p, &run, &outs, &attr, slots, reg_axis, lambda_only)?;
        cells.extend(group_cells);
        if group_curve.is_some() {
            curve = group_curve;
        }
    }
    cells.sort_by_key(|c| c.index);
    let partial = cells.iter().any(|c| c.error.is_some());
    let outcome = SweepOutcome {
        cells,
        curve,
        eig_calls: eig_call_count() - eig_before,
        retrain,
        partial,
    };
    write_reports(spec, &p, &outcome)?;
    eprintln!(
        "sweep done: {} eigendecompositions; retrains {} trained, {} cache hits",
        outcome.eig_calls, outcome.retrain.trained, outcome.retrain.cache_hits
    );
    Ok(outcome)
}

fn failure(e: CliError) -> Result<String> {
    match &e {
        CliError::Core(c) if c.is_numerical() => Ok(e.to_string()),
        _ => Err(e),
    }
}

fn run_group(
    p: &Pipeline,
    run: &TrainOutcome,
    outs: &SubsetOutputs,
    attr: &AttributorConfig,
    slots: Vec<Slot>,
    reg_axis: Option<usize>,
    lambda_only: bool,
) -> Result<(Vec<CellResult>, Option<LambdaCurve>)> {
    let cfg = &p.cfg;
    let need_selection = slots.iter().any(|s| {
        matches!(
            s.reg,
            Some(RegChoice::Grid(_)) | Some(RegChoice::Fixed(Regularization::Auto))
        )
    });
    let failed = |slots: Vec<Slot>, msg: String| {
        slots
            .into_iter()
            .map(|s| CellResult {
                index: s.index,
                axis_values: s.axis_values,
                lambda: None,
                report: None,
                error: Some(msg.clone()),
            })
            .collect()
    };
    let prep = match p.prepare(attr, run, need_selection) {
        Ok(prep) => prep,
        Err(e) => return Ok((failed(slots, failure(e)?), None)),
    };
    let grid = if need_selection {
        match prep.spectrum().and_then(|s| Ok(cfg.grid.resolve(&s)?)) {
            Ok(g) => Some(g),
            Err(e) => return Ok((failed(slots, failure(e)?), None)),
        }
    } else {
        None
    };
    let grid_ref = grid.as_deref().unwrap_or(&[]);
    let mut auto_lambda = None;
    let mut lambdas = Vec::with_capacity(slots.len());
    for s in &slots {
        let l = match s.reg {
            None => Ok(None),
            Some(RegChoice::Grid(i)) => Ok(Some(grid_ref[i])),
            Some(RegChoice::Fixed(Regularization::Value(v))) => Ok(Some(v)),
            Some(RegChoice::Fixed(Regularization::Auto)) => match auto_lambda {
                Some(v) => Ok(Some(v)),
                None => prep.resolve(Regularization::Auto, grid_ref, cfg.threshold).map(|v| {
                    auto_lambda = Some(v);
                    Some(v)
                }),
            },
        };
        lambdas.push(l);
    }

    let mut cells: Vec<CellResult> = slots
        .into_par_iter()
        .zip(lambdas.into_par_iter())
        .map(|(s, l)| {
            let evaluated = l.and_then(|l| {
                let m = prep.scores(l.unwrap_or(0.0))?;
                Ok((l, lds(&m, outs)?))
            });
            let mut cell = CellResult {
                index: s.index,
                axis_values: s.axis_values,
                lambda: None,
                report: None,
                error: None,
            };
            match evaluated {
                Ok((l, rep)) => {
                    cell.lambda = l;
                    cell.report = Some(rep);
                }
                Err(e) => cell.error = Some(failure(e)?),
            }
            if let (Some(k), Some(l)) = (reg_axis, cell.lambda) {
                cell.axis_values[k] = jnum(l);
            }
            Ok(cell)
        })
        .collect::<Result<_>>()?;
    cells.sort_by_key(|c| c.index);

    let curve = if lambda_only {
        Some(lambda_curve(&prep, &cells, outs, cfg.threshold)?)
    } else {
        None
    };
    Ok((cells, curve))
}

fn lambda_curve(prep: &Prepared, cells: &[CellResult], outs: &SubsetOutputs, threshold: f64) -> Result<LambdaCurve> {
    let mut points: Vec<(f64, &LdsReport)> = cells
        .iter()
        .filter_map(|c| Some((c.lambda?, c.report.as_ref()?)))
        .collect();
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    points.dedup_by(|a, b| a.0 == b.0);
    let lambdas: Vec<f64> = points.iter().map(|p| p.0).collect();

    let (ctx, g) = prep.selection_context()?;
    let sur = Surrogate::new(ctx, &g)?;
    let selection = if !lambdas.is_empty() && lambdas.iter().all(|&l| l > 0.0) {
        match sur.report(&lambdas, threshold) {
            Ok(r) => Some(r),
            Err(e) => {
                log::warn!("no selection over the swept λ values: {e}");
                None
            }
        }
    } else {
        None
    };
    if let Some(r) = &selection {
        warn_if_not_monotone(r);
    }
    let rows = points
        .iter()
        .enumerate()
        .map(|(k, (l, rep))| CurveRow {
            lambda: *l,
            lds_mean: rep.mean,
            lds_stderr: rep.stderr,
            xi_bar: selection.as_ref().map(|r| r.xi_bar[k]),
            skipped: selection.as_ref().map(|r| r.skipped[k]),
        })
        .collect();
    let quantiles = quantile_lambdas(ctx.eig())?
        .into_iter()
        .map(|(percent, lambda)| {
            let (lds_mean, lds_stderr) = match prep.scores(lambda).and_then(|m| Ok(lds(&m, outs)?)) {
                Ok(r) => (r.mean, r.stderr),
                Err(e) => {
                    log::warn!("quantile {percent}%: {}", failure(e)?);
                    (f64::NAN, f64::NAN)
                }
            };
            Ok(QuantileRow {
                percent,
                lambda,
                lds_mean,
                lds_stderr,
            })
        })
        .collect::<Result<_>>()?;
    Ok(LambdaCurve {
        rows,
        selection,
        quantiles,
    })
}

fn csv_field(v: &Value) -> String {
    let s = match v {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    };
    s.replace([',', '\n'], ";")
}

fn write_reports(spec: &SweepSpec, p: &Pipeline, out: &SweepOutcome) -> Result<()> {
    let dir = &spec.base.output_dir;
    let names: Vec<&str> = spec.axes.iter().map(|a| a.name.as_str()).collect();
    let mut summary = String::from("cell,");
    for n in &names {
        summary.push_str(n);
        summary.push(',');
    }
    summary.push_str("lambda,lds_mean,lds_stderr,excluded,status\n");
    for c in &out.cells {
        let status = match &c.error {
            Some(e) => format!("error: {}", csv_field(&Value::String(e.clone()))),
            None => "ok".to_string(),
        };
        let _ = write!(summary, "{},", c.index);
        for v in &c.axis_values {
            let _ = write!(summary, "{},", csv_field(v));
        }
        let (mean, stderr, excluded) = match &c.report {
            Some(r) => (num(r.mean), num(r.stderr), r.excluded().to_string()),
            None => Default::default(),
        };
        let lambda = c.lambda.map(num).unwrap_or_default();
        let _ = writeln!(summary, "{lambda},{mean},{stderr},{excluded},{status}");

        let stem = dir.join("cells").join(format!("cell_{:04}", c.index));
        let axes: BTreeMap<&str, &Value> = names.iter().copied().zip(&c.axis_values).collect();
        let mut doc = match &c.report {
            Some(r) => {
                write_text(&stem.with_extension("csv"), &r.to_csv())?;
                r.summary_json(p.seed)
            }
            None => json!({ "seed": p.seed }),
        };
        doc["schema_version"] = json!(SCHEMA_VERSION);
        doc["axes"] = json!(axes);
        doc["lambda"] = c.lambda.map(jnum).unwrap_or(Value::Null);
        doc["status"] = json!(if c.error.is_some() { "error" } else { "ok" });
        if let Some(e) = &c.error {
            doc["error"] = json!(e);
        }
        write_json(&stem.with_extension("json"), &doc)?;
    }
    write_text(&dir.join("sweep_summary.csv"), &summary)?;
    write_json(
        &dir.join("sweep_summary.json"),
        &json!({
            "schema_version": SCHEMA_VERSION,
            "seed": p.seed,
            "attributor": spec.base.attributor.id(),
            "axes": spec.axes,
            "cells": out.cells.len(),
            "validation_size": p.test.len(),
            "partial": out.partial,
        }),
    )?;
    if let Some(curve) = &out.curve {
        write_text(&dir.join("lds_curve.csv"), &curve_csv(&curve.rows))?;
        write_text(&dir.join("quantiles.csv"), &quantiles_csv(&curve.quantiles))?;
        if let Some(sel) = &curve.selection {
            let q: Vec<(f64, f64)> = curve.quantiles.iter().map(|r| (r.percent, r.lambda)).collect();
            let mut doc = selection_json(&spec.base, sel, &q, p.test.len(), out.partial);
            doc["lds_at_lambda_hat"] = jnum(curve.lds_at(sel.lambda_hat).unwrap_or(f64::NAN));
            write_json(&dir.join("selection.json"), &doc)?;
            write_text(&dir.join("surrogate.csv"), &sel.to_csv())?;
        }
    }
    Ok(())
}
