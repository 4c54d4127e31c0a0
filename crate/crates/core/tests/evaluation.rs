mod common;

use attune_core::attrib::{iffim, AttributionMatrix, FimContext, FimMode};
use attune_core::eval::*;
use attune_core::model::{output_grads, per_example_grads, risk_gradient};
use attune_core::select::{auto_grid, sufficient_condition_diagnostic, ConditionStatus, Surrogate};
use attune_core::tensor::norm2;
use attune_core::train::{objective_gradient, sample_subsets, Retrainer, SubsetOutputs, SubsetPlan};
use attune_core::{Checkpoint, Dataset, DenseMatrix, Error, ModelSpec, SeededRng};
use common::{fit_lr, lr_config, random_matrix, random_vec, rings};

#[test]
fn spearman_with_ties() {
    let r = spearman(&[1.0, 2.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
    assert!((r - 0.9487).abs() < 1e-4);
    assert!(matches!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(Error::UndefinedCorrelation(_))));
}

fn additive_outputs(tau: &DenseMatrix, plan: &SubsetPlan) -> DenseMatrix {
    subset_sums(tau, plan).unwrap()
}

#[test]
fn perfect_additive_predictor_scores_one() {
    let mut rng = SeededRng::new(1, 0);
    let tau = random_matrix(4, 30, &mut rng);
    let plan = sample_subsets(30, 15, 20, 1).unwrap();
    let outputs = additive_outputs(&tau, &plan);
    let rep = lds_scores(&tau, &plan, &outputs, "oracle").unwrap();
    for s in &rep.scores {
        assert!((s.unwrap() - 1.0).abs() < 1e-12);
    }
    assert!((rep.mean - 1.0).abs() < 1e-12);
}

#[test]
fn lds_is_rank_invariant() {
    let mut rng = SeededRng::new(2, 0);
    let tau = random_matrix(3, 25, &mut rng);
    let plan = sample_subsets(25, 12, 30, 2).unwrap();
    let outputs = random_matrix(30, 3, &mut rng);
    let base = lds_scores(&tau, &plan, &outputs, "x").unwrap();
    let scaled = lds_scores(&tau.scale(4.5), &plan, &outputs, "x").unwrap();
    let warped = DenseMatrix::from_fn(30, 3, |i, j| outputs.get(i, j).exp() * 3.0 + 1.0);
    let monotone = lds_scores(&tau, &plan, &warped, "x").unwrap();
    assert_eq!(base.scores, scaled.scores);
    for (a, b) in base.scores.iter().zip(&monotone.scores) {
        assert!((a.unwrap() - b.unwrap()).abs() < 1e-12);
    }
}

#[test]
fn random_attributions_have_null_lds() {
    let mut values = vec![];
    for seed in 0..100 {
        let mut rng = SeededRng::new(seed, 3);
        let tau = random_matrix(1, 40, &mut rng);
        let plan = sample_subsets(40, 20, 50, seed).unwrap();
        let outputs = random_matrix(50, 1, &mut rng);
        values.push(lds_scores(&tau, &plan, &outputs, "random").unwrap().mean);
    }
    let (mean, stderr) = mean_stderr(&values);
    assert!(mean.abs() < 3.0 * stderr, "mean {mean}, stderr {stderr}");
}

#[test]
fn constant_aggregate_is_excluded_and_counted() {
    let mut rng = SeededRng::new(4, 0);
    let mut tau = random_matrix(3, 10, &mut rng);
    tau.row_mut(1).fill(0.0);
    let plan = sample_subsets(10, 5, 6, 4).unwrap();
    let outputs = random_matrix(6, 3, &mut rng);
    let rep = lds_scores(&tau, &plan, &outputs, "x").unwrap();
    assert_eq!(rep.excluded(), 1);
    assert!(rep.scores[1].is_none());
    let valid: Vec<f64> = rep.scores.iter().flatten().copied().collect();
    assert!((rep.mean - valid.iter().sum::<f64>() / 2.0).abs() < 1e-15);
    let csv = rep.to_csv();
    assert!(csv.starts_with("test_index,spearman,excluded_flag\n"));
    assert!(csv.contains("\n1,,1\n"));
    assert!(matches!(
        lds_scores(&tau, &sample_subsets(10, 5, 2, 0).unwrap(), &random_matrix(2, 3, &mut rng), "x"),
        Err(Error::Domain(_))
    ));
}

struct Exhaustive {
    data: Dataset,
    test: Dataset,
    ckpt: Checkpoint,
    outs: SubsetOutputs,
}

/// θ*_S on non-separable rings without weight decay, so `Σ ∇L_i = 0`;
/// subset retrains carry a small weight decay to keep every subset problem bounded.
fn exhaustive(n: usize, a: usize, seed: u64) -> Exhaustive {
    let data = rings(n, seed);
    let test = rings(4, seed + 100);
    let ckpt = fit_lr(&data, 0.0);
    let spec = ModelSpec::logistic(2, 2);
    let plan = SubsetPlan::exhaustive(n, a).unwrap();
    let (outs, _) = Retrainer::new(&data, spec, lr_config(1e-2)).run(&plan, &test).unwrap();
    Exhaustive { data, test, ckpt, outs }
}

#[test]
fn population_oracle_counts_retrains() {
    let data = rings(4, 5);
    let test = rings(2, 6);
    let ckpt = fit_lr(&data, 0.0);
    let ctx = FimContext::from_checkpoint(&ckpt, &data, None).unwrap();
    let g = output_grads(&ckpt, &test).unwrap().0;
    let attr = iffim(&ctx, &g, 0.1).unwrap();
    let r = Retrainer::new(&data, ModelSpec::logistic(2, 2), lr_config(1e-2));
    let pop = population_pearson_lds_oracle(&r, 2, &attr, &test).unwrap();
    assert_eq!(pop.retrains, 6);
    let big = rings(13, 7);
    let r = Retrainer::new(&big, ModelSpec::logistic(2, 2), lr_config(1e-2));
    assert!(matches!(
        population_pearson_lds_oracle(&r, 2, &attr, &test),
        Err(Error::Capability(_))
    ));
}

#[test]
fn sampled_pearson_over_all_subsets_equals_population() {
    let ex = exhaustive(6, 3, 8);
    let ctx = FimContext::from_checkpoint(&ex.ckpt, &ex.data, None).unwrap();
    let g = output_grads(&ex.ckpt, &ex.test).unwrap().0;
    let attr = iffim(&ctx, &g, 0.05).unwrap();
    let c_p = pearson_lds(&attr.scores, &ex.outs.plan, &ex.outs.outputs).unwrap();
    let sums = subset_sums(&attr.scores, &ex.outs.plan).unwrap();
    for t in 0..ex.test.len() {
        let want = pearson(&ex.outs.outputs.column(t), &sums.column(t)).unwrap();
        assert!((c_p[t].unwrap() - want).abs() < 1e-10);
    }
    let additive = AttributionMatrix::new(random_matrix(2, 6, &mut SeededRng::new(8, 1)), "x").unwrap();
    let exact = additive_outputs(&additive.scores, &ex.outs.plan);
    for c in pearson_lds(&additive.scores, &ex.outs.plan, &exact).unwrap() {
        assert!((c.unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn alpha_sums_to_zero_and_matches_the_g_identity() {
    let ex = exhaustive(6, 3, 9);
    for (ck, sub) in ex.outs.checkpoints.iter().zip(&ex.outs.plan.subsets) {
        let g = objective_gradient(ck, &ex.data.subset(sub), 1e-2).unwrap();
        assert!(norm2(&g) < 1e-10);
    }
    let j = per_example_grads(&ex.ckpt, &ex.data).unwrap();
    let ctx = FimContext::from_checkpoint(&ex.ckpt, &ex.data, None).unwrap();
    let grads = output_grads(&ex.ckpt, &ex.test).unwrap().0;
    for t in 0..ex.test.len() {
        let av = alpha_vector(&ex.outs, t).unwrap();
        assert!(av.counts.iter().all(|&c| c == 10));
        assert!(av.alpha.iter().sum::<f64>().abs() < 1e-10);

        let col = ex.outs.outputs.column(t);
        let p = j.cols();
        let mut lhs = vec![0.0; p];
        for (sub, f) in ex.outs.plan.subsets.iter().zip(&col) {
            let gr = risk_gradient(&ex.ckpt, &ex.data, Some(sub)).unwrap();
            for k in 0..p {
                lhs[k] += gr[k] * (f - av.mean_output) / ex.outs.plan.s() as f64;
            }
        }
        let oq = oracle_lhs(&av.alpha, &ctx, grads.row(t), 0.1).unwrap();
        for k in 0..p {
            assert!((lhs[k] - oq.g[k]).abs() < 1e-8);
        }
    }
    let constant = alpha_from(&ex.outs.plan, &[2.5; 20]).unwrap();
    assert!(constant.alpha.iter().all(|v| v.abs() < 1e-15));
}

#[test]
fn uncovered_index_is_a_coverage_error() {
    let plan = SubsetPlan {
        n: 3,
        a: 1,
        subsets: vec![vec![0], vec![1]],
        seed: 0,
    };
    assert!(matches!(alpha_from(&plan, &[1.0, 2.0]), Err(Error::Coverage { index: 2 })));
}

#[test]
fn lhs_and_xi_lie_in_the_unit_interval() {
    let mut rng = SeededRng::new(10, 0);
    let mut checked = 0;
    let mut tries = 0;
    while checked < 200 {
        tries += 1;
        assert!(tries < 2000);
        let n = 3 + rng.below(10);
        let p = 2 + rng.below(10);
        let j = random_matrix(n, p, &mut rng);
        let ctx = FimContext::new(j, None, None).unwrap();
        let alpha = random_vec(n, &mut rng);
        let gf = random_vec(p, &mut rng);
        let lambda = 10f64.powf(-3.0 + 5.0 * rng.uniform());
        let oq = oracle_lhs(&alpha, &ctx, &gf, lambda).unwrap();
        if oq.r <= 0.0 {
            continue;
        }
        checked += 1;
        let sur = Surrogate::new(&ctx, &DenseMatrix::new(1, p, gf).unwrap()).unwrap();
        let x = sur.xi(0, lambda).unwrap().unwrap();
        assert!(oq.lhs >= 0.0 && oq.lhs <= 1.0 + 1e-12, "lhs {}", oq.lhs);
        assert!(x > 0.0 && x <= 1.0 + 1e-12, "ξ {x}");
        assert!(oq.o >= 0.0);
    }
}

#[test]
fn cauchy_schwarz_equality_cases() {
    let mut rng = SeededRng::new(11, 0);
    for (n, p) in [(12, 5), (5, 12)] {
        let j = random_matrix(n, p, &mut rng);
        let gf = random_vec(p, &mut rng);
        for mode in [FimMode::Primal, FimMode::Dual] {
            let ctx = FimContext::new(j.clone(), None, Some(mode)).unwrap();
            let lambda = 0.3;
            let jg = j.matvec(&gf).unwrap();

            let alpha: Vec<f64> = jg.iter().map(|v| -2.0 * v).collect();
            let oq = oracle_lhs(&alpha, &ctx, &gf, lambda).unwrap();
            assert!((oq.lhs - 1.0).abs() < 1e-10, "{mode:?}: lhs {}", oq.lhs);

            // α ∝ −(K + λI)⁻¹ J∇f with K = JJᵀ/n makes the left side equal ξ
            let k = j.outer_gram().scale(1.0 / n as f64).add_diagonal(lambda).unwrap();
            let alpha: Vec<f64> = common::invert(&k).matvec(&jg).unwrap().iter().map(|v| -v).collect();
            let oq = oracle_lhs(&alpha, &ctx, &gf, lambda).unwrap();
            let sur = Surrogate::new(&ctx, &DenseMatrix::new(1, p, gf.clone()).unwrap()).unwrap();
            let x = sur.xi(0, lambda).unwrap().unwrap();
            assert!((oq.lhs - x).abs() < 1e-10);
            let d = sufficient_condition_diagnostic(&oq, &sur.t_values(0, lambda).unwrap()).unwrap();
            assert!(d.r_positive);
        }
    }
}

#[test]
fn non_positive_r_is_inconclusive() {
    let mut rng = SeededRng::new(12, 0);
    let j = random_matrix(8, 3, &mut rng);
    let gf = random_vec(3, &mut rng);
    let ctx = FimContext::new(j.clone(), None, None).unwrap();
    let alpha = j.matvec(&gf).unwrap();
    let oq = oracle_lhs(&alpha, &ctx, &gf, 0.2).unwrap();
    assert!(oq.r < 0.0);
    let sur = Surrogate::new(&ctx, &DenseMatrix::new(1, 3, gf).unwrap()).unwrap();
    let d = sufficient_condition_diagnostic(&oq, &sur.t_values(0, 0.2).unwrap()).unwrap();
    assert_eq!(d.condition, ConditionStatus::Inconclusive);
    assert!(matches!(
        sufficient_condition_diagnostic(&oq, &sur.t_values(0, 0.3).unwrap()),
        Err(Error::Domain(_))
    ));
}

fn population_pearson(ex: &Exhaustive, ctx: &FimContext, grads: &DenseMatrix, lambda: f64) -> Vec<f64> {
    let attr = iffim(ctx, grads, lambda).unwrap();
    pearson_lds(&attr.scores, &ex.outs.plan, &ex.outs.outputs)
        .unwrap()
        .into_iter()
        .map(|c| c.unwrap())
        .collect()
}

#[test]
fn closed_form_population_pearson() {
    let (n, a) = (8, 4);
    let ex = exhaustive(n, a, 13);
    let ctx = FimContext::from_checkpoint(&ex.ckpt, &ex.data, None).unwrap();
    let grads = output_grads(&ex.ckpt, &ex.test).unwrap().0;
    let sur = Surrogate::new(&ctx, &grads).unwrap();
    for lambda in [1e-3, 1e-1, 1.0] {
        let c_p = population_pearson(&ex, &ctx, &grads, lambda);
        for t in 0..ex.test.len() {
            let col = ex.outs.outputs.column(t);
            let (m, s) = (col.iter().sum::<f64>() / col.len() as f64, col.len() as f64);
            let var_f = col.iter().map(|f| (f - m) * (f - m)).sum::<f64>() / s;
            let alpha = alpha_vector(&ex.outs, t).unwrap().alpha;
            let oq = oracle_lhs(&alpha, &ctx, grads.row(t), lambda).unwrap();
            let tv = sur.t_values(t, lambda).unwrap();
            let cov = a as f64 * oq.r;
            let var_sum = (a * (n - a)) as f64 / (n - 1) as f64 * tv.t2;
            let closed = cov / (var_f * var_sum).sqrt();
            assert!((closed - c_p[t]).abs() < 1e-6, "λ = {lambda}, t = {t}: {closed} vs {}", c_p[t]);
        }
    }
}

#[test]
fn sufficient_condition_predicts_increasing_population_pearson() {
    let ex = exhaustive(8, 4, 14);
    let ctx = FimContext::from_checkpoint(&ex.ckpt, &ex.data, None).unwrap();
    let grads = output_grads(&ex.ckpt, &ex.test).unwrap().0;
    let sur = Surrogate::new(&ctx, &grads).unwrap();
    let grid = auto_grid(&ctx.spectrum(), 15).unwrap();
    let mut met = 0;
    for &lambda in &grid {
        let here = population_pearson(&ex, &ctx, &grads, lambda);
        let next = population_pearson(&ex, &ctx, &grads, 1.05 * lambda);
        for t in 0..ex.test.len() {
            let alpha = alpha_vector(&ex.outs, t).unwrap().alpha;
            let oq = oracle_lhs(&alpha, &ctx, grads.row(t), lambda).unwrap();
            let d = sufficient_condition_diagnostic(&oq, &sur.t_values(t, lambda).unwrap()).unwrap();
            if d.condition == ConditionStatus::Met {
                met += 1;
                assert!(next[t] > here[t], "λ = {lambda}, t = {t}: {} -> {}", here[t], next[t]);
            }
        }
    }
    assert!(met > 0);
}

