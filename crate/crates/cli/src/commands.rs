//! One function per subcommand. Each takes a validated config whose `seed`
//! is the run seed and writes its reports under `output-dir`.

use std::fmt::Write as _;

use attune_core::attrib::{iffim, FimContext};
use attune_core::eval::{alpha_vector, lds, oracle_lhs, pearson_lds, LdsReport, MAX_EXHAUSTIVE_N};
use attune_core::model::output_grads;
use attune_core::select::{
    spectrum_quantile, sufficient_condition_diagnostic, ConditionStatus, Surrogate, SurrogateReport,
    BASELINE_QUANTILES,
};
use attune_core::tensor::io::write_matrix;
use attune_core::train::io::save_checkpoint;
use attune_core::train::{RetrainStats, SubsetPlan, TrainOutcome};
use attune_core::{Error, SymEig};
use serde_json::{json, Value};

use crate::config::{DatasetConfig, Regularization, RunConfig};
use crate::error::{CliError, Result};
use crate::pipeline::{Pipeline, Prepared};
use crate::report::{jnum, num, opt, write_json, write_text, DIAGNOSE_HEADER, SCHEMA_VERSION};

/// Finite difference step ratio of the diagnostic.
pub const FD_RATIO: f64 = 1.05;

pub fn gen_data(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let DatasetConfig::Synthetic(g) = &cfg.dataset else {
        return Err(CliError::Config("gen-data needs a synthetic dataset".into()));
    };
    let (train, test) = g
        .generate(cfg.seed)
        .map_err(|e| CliError::Config(format!("dataset: {e}")))?;
    let dir = cfg.output_dir.join("data");
    train.save(&dir, "train")?;
    test.save(&dir, "test")?;
    println!("wrote {} training and {} test examples to {}", train.len(), test.len(), dir.display());
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<TrainOutcome> {
    let p = Pipeline::new(cfg.clone())?;
    let run = p.fit()?;
    let dir = cfg.output_dir.join("checkpoints");
    std::fs::create_dir_all(&dir)?;
    save_checkpoint(&dir.join("final.atck"), &run.checkpoint)?;
    for c in &run.epochs {
        save_checkpoint(&dir.join(format!("epoch_{:03}.atck", c.epoch)), c)?;
    }
    write_json(
        &cfg.output_dir.join("train_summary.json"),
        &json!({
            "schema_version": SCHEMA_VERSION,
            "seed": p.seed,
            "param_count": p.spec.param_count(),
            "epochs": run.epochs.len(),
            "losses": run.losses.iter().map(|&v| jnum(v)).collect::<Vec<_>>(),
            "learning_rates": run.learning_rates,
            "grad_norm": jnum(run.grad_norm),
            "newton_steps": run.newton_steps,
            "checkpoint_hash": run.checkpoint.content_hash(),
            "initialization": "seed-derived: weights N(0, 0.01^2) for logistic regression, N(0, 1/fan_in) for the mlp; zero biases",
            "stopping": "fixed epoch count; convex models then take damped Newton steps until the gradient norm is below tolerance",
            "retrain_initialization": serde_json::to_value(p.train_config().init_mode(p.spec.is_convex())).expect("init serializes"),
        }),
    )?;
    println!("trained {} epochs, final gradient norm {:e}", run.epochs.len(), run.grad_norm);
    Ok(run)
}

fn plan_json(plan: &SubsetPlan) -> Value {
    json!({
        "schema_version": SCHEMA_VERSION,
        "n": plan.n,
        "a": plan.a,
        "s": plan.s(),
        "seed": plan.seed,
        "subsets": plan.subsets,
    })
}

pub fn retrain(cfg: &RunConfig) -> Result<RetrainStats> {
    let p = Pipeline::new(cfg.clone())?;
    let run = p.fit()?;
    let plan = p.plan()?;
    let cache = p.cache()?;
    let (outs, stats) = p.retrain(&run.checkpoint, &plan, Some(&cache))?;
    write_json(&cfg.output_dir.join("plan.json"), &plan_json(&plan))?;
    write_matrix(&cfg.output_dir.join("retrain_outputs.atrm"), &outs.outputs)?;
    print_stats(&stats);
    Ok(stats)
}

fn print_stats(stats: &RetrainStats) {
    eprintln!(
        "retrains: {} trained, {} cache hits, {} corrupt entries",
        stats.trained, stats.cache_hits, stats.corrupt_entries
    );
}

/// The configured λ, resolving `auto` through the surrogate over the config grid.
fn configured_lambda(cfg: &RunConfig, prep: &Prepared) -> Result<f64> {
    match cfg.attributor.regularization() {
        None => Ok(0.0),
        Some(Regularization::Value(v)) => Ok(v),
        Some(Regularization::Auto) => {
            let grid = cfg.grid.resolve(&prep.spectrum()?)?;
            let lambda = prep.resolve(Regularization::Auto, &grid, cfg.threshold)?;
            log::info!("selected λ̂ = {lambda:e}");
            Ok(lambda)
        }
    }
}

fn needs_selection(cfg: &RunConfig) -> bool {
    cfg.attributor.regularization() == Some(Regularization::Auto)
}

pub fn attribute(cfg: &RunConfig) -> Result<f64> {
    let p = Pipeline::new(cfg.clone())?;
    let run = p.fit()?;
    let prep = p.prepare(&cfg.attributor, &run, needs_selection(cfg))?;
    let lambda = configured_lambda(cfg, &prep)?;
    let m = prep.scores(lambda)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    m.save(&cfg.output_dir, "attribution")?;
    println!("{} scores for {} x {} at λ = {lambda}", m.attributor, m.n_test(), m.n_train());
    Ok(lambda)
}

pub fn evaluate_lds(cfg: &RunConfig) -> Result<LdsReport> {
    let p = Pipeline::new(cfg.clone())?;
    let run = p.fit()?;
    let prep = p.prepare(&cfg.attributor, &run, needs_selection(cfg))?;
    let lambda = configured_lambda(cfg, &prep)?;
    let m = prep.scores(lambda)?;
    let cache = p.cache()?;
    let (outs, stats) = p.retrain(&run.checkpoint, &p.plan()?, Some(&cache))?;
    print_stats(&stats);
    let rep = lds(&m, &outs)?;
    write_text(&cfg.output_dir.join("lds.csv"), &rep.to_csv())?;
    let mut summary = rep.summary_json(p.seed);
    summary["schema_version"] = json!(SCHEMA_VERSION);
    summary["lambda"] = jnum(lambda);
    summary["validation_size"] = json!(p.test.len());
    write_json(&cfg.output_dir.join("lds_summary.json"), &summary)?;
    println!("LDS {:.4} ± {:.4} at λ = {lambda} ({} excluded)", rep.mean, rep.stderr, rep.excluded());
    Ok(rep)
}

/// λ at each baseline quantile of the selection spectrum.
pub fn quantile_lambdas(eig: &SymEig) -> Result<Vec<(f64, f64)>> {
    BASELINE_QUANTILES
        .iter()
        .map(|&q| Ok((q, spectrum_quantile(eig, q)?)))
        .collect()
}

/// The `selection.json` document.
pub fn selection_json(
    cfg: &RunConfig,
    report: &SurrogateReport,
    quantiles: &[(f64, f64)],
    validation_size: usize,
    partial: bool,
) -> Value {
    json!({
        "schema_version": SCHEMA_VERSION,
        "attributor": cfg.attributor.id(),
        "lambda_hat": report.lambda_hat,
        "threshold": report.threshold,
        "grid_spec": serde_json::to_value(&cfg.grid).expect("grid serializes"),
        "grid": report.grid,
        "seed": cfg.seed,
        "validation_size": validation_size,
        "skipped": report.skipped.get(report.hat_index).copied().unwrap_or(0),
        "quantiles": quantiles
            .iter()
            .map(|(q, l)| json!({"percent": q, "lambda": l}))
            .collect::<Vec<_>>(),
        "partial": partial,
    })
}

pub fn warn_if_not_monotone(report: &SurrogateReport) {
    let bad = report.monotonicity_violations(0.0);
    if !bad.is_empty() {
        log::warn!("ξ̄ decreases at {} grid points (first at λ = {:e})", bad.len(), report.grid[bad[0]]);
    }
}

pub fn select_lambda(cfg: &RunConfig) -> Result<SurrogateReport> {
    let p = Pipeline::new(cfg.clone())?;
    let run = p.fit()?;
    let prep = p.prepare(&cfg.attributor, &run, true)?;
    let (ctx, _) = prep.selection_context()?;
    let grid = cfg.grid.resolve(&ctx.spectrum())?;
    let report = prep.surrogate_report(&grid, cfg.threshold)?;
    warn_if_not_monotone(&report);
    let quantiles = quantile_lambdas(ctx.eig())?;
    write_text(&cfg.output_dir.join("surrogate.csv"), &report.to_csv())?;
    write_json(
        &cfg.output_dir.join("selection.json"),
        &selection_json(cfg, &report, &quantiles, p.test.len(), false),
    )?;
    println!("λ̂ = {} (ξ̄ = {:.4})", report.lambda_hat, report.xi_bar[report.hat_index]);
    Ok(report)
}

/// Counts from the sufficient-condition diagnostic.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DiagnoseSummary {
    pub rows: usize,
    pub met: usize,
    /// Rows where the condition holds and `c_p` rises from λ to 1.05λ.
    pub met_and_increasing: usize,
    pub inconclusive: usize,
    pub skipped: usize,
}

/// Compares both sides of the sufficient condition against finite
/// differences of the exact population Pearson LDS. Needs `n ≤ 12`.
pub fn diagnose(cfg: &RunConfig) -> Result<DiagnoseSummary> {
    let p = Pipeline::new(cfg.clone())?;
    let n = p.train.len();
    if n > MAX_EXHAUSTIVE_N {
        return Err(Error::Capability(format!(
            "diagnose enumerates every subset and is limited to n <= {MAX_EXHAUSTIVE_N}, got n = {n}"
        ))
        .into());
    }
    let run = p.fit()?;
    let ckpt = &run.checkpoint;
    let ctx = FimContext::from_checkpoint(ckpt, &p.train, None)?;
    let grads = output_grads(ckpt, &p.test)?.0;
    let sur = Surrogate::new(&ctx, &grads)?;
    let plan = SubsetPlan::exhaustive(n, p.subset_size())?;
    let cache = p.cache()?;
    let (outs, stats) = p.retrain(ckpt, &plan, Some(&cache))?;
    print_stats(&stats);
    let grid = cfg.grid.resolve(&ctx.spectrum())?;

    let mut csv = format!("{DIAGNOSE_HEADER}\n");
    let mut sum = DiagnoseSummary::default();
    for &lambda in &grid {
        let c_p = pearson_lds(&iffim(&ctx, &grads, lambda)?.scores, &plan, &outs.outputs)?;
        let c_next = pearson_lds(&iffim(&ctx, &grads, FD_RATIO * lambda)?.scores, &plan, &outs.outputs)?;
        for t in 0..p.test.len() {
            sum.rows += 1;
            let alpha = alpha_vector(&outs, t)?;
            let fd = match (c_p[t], c_next[t]) {
                (Some(a), Some(b)) => Some(b > a),
                _ => None,
            };
            let fd_field = fd.map(|b| if b { "1" } else { "0" }).unwrap_or("");
            let oq = match oracle_lhs(&alpha.alpha, &ctx, grads.row(t), lambda) {
                Ok(oq) => oq,
                Err(Error::Degenerate(_)) => {
                    sum.skipped += 1;
                    let _ = writeln!(
                        csv,
                        "{t},{},,,,,,skipped,{},{},{fd_field}",
                        num(lambda),
                        opt(c_p[t]),
                        opt(c_next[t])
                    );
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            let d = sufficient_condition_diagnostic(&oq, &sur.t_values(t, lambda)?)?;
            let label = match d.condition {
                ConditionStatus::Met => {
                    sum.met += 1;
                    if fd == Some(true) {
                        sum.met_and_increasing += 1;
                    }
                    "met"
                }
                ConditionStatus::NotMet => "not-met",
                ConditionStatus::Inconclusive => {
                    sum.inconclusive += 1;
                    "inconclusive"
                }
            };
            let _ = writeln!(
                csv,
                "{t},{},{},{},{},{},{},{label},{},{},{fd_field}",
                num(lambda),
                num(oq.r),
                num(oq.o),
                num(oq.t1),
                num(d.lhs),
                num(d.rhs),
                opt(c_p[t]),
                opt(c_next[t])
            );
        }
    }
    write_text(&cfg.output_dir.join("diagnose.csv"), &csv)?;
    write_json(
        &cfg.output_dir.join("diagnose_summary.json"),
        &json!({
            "schema_version": SCHEMA_VERSION,
            "seed": p.seed,
            "n": n,
            "a": plan.a,
            "s": plan.s(),
            "grid": grid,
            "rows": sum.rows,
            "met": sum.met,
            "met_and_increasing": sum.met_and_increasing,
            "inconclusive": sum.inconclusive,
            "skipped": sum.skipped,
        }),
    )?;
    println!(
        "condition met in {} of {} rows; c_p increased in {} of those",
        sum.met, sum.rows, sum.met_and_increasing
    );
    Ok(sum)
}
