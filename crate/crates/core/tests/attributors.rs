mod common;

use attune_core::attrib::*;
use attune_core::eval::spearman;
use attune_core::model::{forward_eval, grad_output_f, loss_grad, output_grads, per_example_grads, risk_hessian, risk_hvp, Example};
use attune_core::tensor::{dot, make_projection, norm2, sym_eig};
use attune_core::{DenseMatrix, Error, ModelSpec, SeededRng};
use common::{fit_lr, invert, random_checkpoint, random_matrix, random_vec, rel_err};

fn row_matrix(v: &[f64]) -> DenseMatrix {
    DenseMatrix::new(1, v.len(), v.to_vec()).unwrap()
}

#[test]
fn iffim_rank_one_matches_sherman_morrison() {
    let mut rng = SeededRng::new(1, 0);
    let g = random_vec(5, &mut rng);
    let h = random_vec(5, &mut rng);
    for mode in [FimMode::Primal, FimMode::Dual] {
        let ctx = FimContext::new(row_matrix(&g), None, Some(mode)).unwrap();
        for lambda in [0.1, 1.0, 7.0] {
            let got = iffim(&ctx, &row_matrix(&h), lambda).unwrap().scores.get(0, 0);
            // (ggᵀ + λI)⁻¹ = (I − ggᵀ/(λ + ‖g‖²)) / λ
            let hg = dot(&h, &g);
            let gg = dot(&g, &g);
            let want = -(hg - hg * gg / (lambda + gg)) / lambda;
            assert!(rel_err(got, want) < 1e-12, "{mode:?} λ = {lambda}: {got} vs {want}");
        }
    }
    let unit: Vec<f64> = g.iter().map(|v| v / norm2(&g)).collect();
    let ctx = FimContext::new(row_matrix(&unit), None, None).unwrap();
    let s = iffim(&ctx, &row_matrix(&unit), 1.0).unwrap().scores.get(0, 0);
    assert!((s + 0.5).abs() < 1e-14);
}

#[test]
fn primal_and_dual_agree() {
    let mut rng = SeededRng::new(2, 0);
    let j = random_matrix(30, 50, &mut rng);
    let g = random_matrix(6, 50, &mut rng);
    let primal = FimContext::new(j.clone(), None, Some(FimMode::Primal)).unwrap();
    let dual = FimContext::new(j.clone(), None, Some(FimMode::Dual)).unwrap();
    assert_eq!(FimContext::new(j, None, None).unwrap().mode(), FimMode::Dual);
    for lambda in [1e-4, 1e-2, 1.0, 100.0] {
        let a = iffim(&primal, &g, lambda).unwrap().scores;
        let b = iffim(&dual, &g, lambda).unwrap().scores;
        assert!(a.max_abs_diff(&b) < 1e-8, "λ = {lambda}: {:e}", a.max_abs_diff(&b));
    }
}

#[test]
fn iffim_matches_dense_inverse() {
    let mut rng = SeededRng::new(3, 0);
    let (n, p) = (25, 12);
    let j = random_matrix(n, p, &mut rng);
    let g = random_matrix(4, p, &mut rng);
    let ctx = FimContext::new(j.clone(), None, None).unwrap();
    let lambda = 0.05;
    let inv = invert(&j.gram().scale(1.0 / n as f64).add_diagonal(lambda).unwrap());
    let want = g.matmul(&inv).unwrap().matmul_tr(&j).unwrap().scale(-1.0);
    let got = iffim(&ctx, &g, lambda).unwrap().scores;
    assert!(got.max_abs_diff(&want) < 1e-10);
}

#[test]
fn identity_projection_is_a_no_op() {
    let mut rng = SeededRng::new(4, 0);
    let j = random_matrix(20, 8, &mut rng);
    let g = random_matrix(3, 8, &mut rng);
    let plain = FimContext::new(j.clone(), None, None).unwrap();
    let proj = FimContext::new(j, Some(DenseMatrix::identity(8)), None).unwrap();
    for lambda in [1e-3, 0.1, 10.0] {
        let a = iffim(&plain, &g, lambda).unwrap();
        let b = iffim_projected(&proj, &g, lambda).unwrap();
        assert_eq!(b.attributor, "iffim-projected");
        assert!(a.scores.max_abs_diff(&b.scores) < 1e-10);
    }
    assert!(iffim_projected(&plain, &g, 0.1).is_err());
}

#[test]
fn projection_shape_mismatch_is_rejected() {
    let mut rng = SeededRng::new(5, 0);
    let j = random_matrix(10, 8, &mut rng);
    let p = random_matrix(7, 4, &mut rng);
    assert!(matches!(FimContext::new(j, Some(p), None), Err(Error::Domain(_))));
}

#[test]
fn duplicated_projection_directions_stay_finite() {
    let mut rng = SeededRng::new(6, 0);
    let j = random_matrix(15, 10, &mut rng);
    let g = random_matrix(3, 10, &mut rng);
    let half = random_matrix(10, 3, &mut rng);
    let p = DenseMatrix::from_fn(10, 6, |i, c| half.get(i, c % 3));
    let ctx = FimContext::new(j, Some(p), None).unwrap();
    for lambda in [1e-8, 1e-3, 1.0] {
        assert!(iffim(&ctx, &g, lambda).unwrap().scores.all_finite());
    }
}

#[test]
fn projected_scores_rank_like_unprojected() {
    // binary LR with 1023 features has p = 2048 parameters
    let spec = ModelSpec::logistic(1023, 2);
    assert_eq!(spec.param_count(), 2048);
    let (train, test) = common::gaussian(400, 8, 1023, 0.1, 7);
    let mut rng = SeededRng::new(7, 1);
    let ckpt = random_checkpoint(spec, &mut rng).with_theta(random_vec(2048, &mut rng).iter().map(|v| 0.05 * v).collect());
    let full = FimContext::from_checkpoint(&ckpt, &train, None).unwrap();
    let proj = make_projection(2048, 512, &mut SeededRng::new(7, 2)).unwrap();
    let small = FimContext::from_checkpoint(&ckpt, &train, Some(proj)).unwrap();
    let g = output_grads(&ckpt, &test).unwrap().0;
    let lambda = 0.1 * full.max_eigenvalue();
    let a = iffim(&full, &g, lambda).unwrap();
    let b = iffim(&small, &g, lambda).unwrap();
    for t in 0..test.len() {
        let rho = spearman(a.row(t), b.row(t)).unwrap();
        assert!(rho > 0.9, "test point {t}: Spearman {rho}");
    }
}

#[test]
fn iffim_large_lambda_limit() {
    let mut rng = SeededRng::new(8, 0);
    let j = random_matrix(20, 6, &mut rng);
    let g = random_matrix(3, 6, &mut rng);
    let ctx = FimContext::new(j.clone(), None, None).unwrap();
    let lambda = 1e6;
    let scaled = iffim(&ctx, &g, lambda).unwrap().scores.scale(lambda);
    let limit = g.matmul_tr(&j).unwrap().scale(-1.0);
    for (a, b) in scaled.data().iter().zip(limit.data()) {
        assert!(rel_err(*a, *b) < 1e-3);
    }
}

#[test]
fn scores_are_linear_in_the_test_gradient() {
    let mut rng = SeededRng::new(9, 0);
    let j = random_matrix(20, 6, &mut rng);
    let g = random_matrix(3, 6, &mut rng);
    let probs: Vec<f64> = (0..20).map(|_| 0.1 + 0.8 * rng.uniform()).collect();
    let ctx = FimContext::new(j.clone(), None, None).unwrap();
    let a = iffim(&ctx, &g, 0.3).unwrap().scores;
    let b = iffim(&ctx, &g.scale(2.0), 0.3).unwrap().scores;
    assert!(a.scale(2.0).max_abs_diff(&b) < 1e-12);
    let tr = TrakContext::new(&j, &probs, TrakOptions::default()).unwrap();
    let a = tr.scores(&g, 0.3).unwrap().scores;
    let b = tr.scores(&g.scale(2.0), 0.3).unwrap().scores;
    assert!(a.scale(2.0).max_abs_diff(&b) < 1e-12);
    let h = j.gram().scale(0.05).add_diagonal(0.1).unwrap();
    let a = explicit_scores(&h, 0.3, &g, &j).unwrap();
    let b = explicit_scores(&h, 0.3, &g.scale(2.0), &j).unwrap();
    assert!(a.scale(2.0).max_abs_diff(&b) < 1e-12);
    let (a, _) = tracin_from_grads(&[(g.clone(), j.clone())], &[1.0], false).unwrap();
    let (b, _) = tracin_from_grads(&[(g.scale(2.0), j)], &[1.0], false).unwrap();
    assert!(a.scale(2.0).max_abs_diff(&b) < 1e-12);
}

#[test]
fn trak_right_factor_identity() {
    let mut rng = SeededRng::new(10, 0);
    for k in 0..50 {
        let spec = if k % 2 == 0 {
            ModelSpec::logistic(4, 3)
        } else {
            ModelSpec::mlp(4, 5, 3)
        };
        let ckpt = random_checkpoint(spec, &mut rng);
        let x = random_vec(4, &mut rng);
        let z = Example { x: &x, y: rng.below(3) };
        let gl = loss_grad(&ckpt, z).unwrap();
        let out = grad_output_f(&ckpt, z).unwrap();
        let p = forward_eval(&ckpt, z).unwrap().prob;
        for (a, b) in gl.iter().zip(&out.grad) {
            assert!((a + (1.0 - p) * b).abs() < 1e-10);
        }
    }
}

#[test]
fn trak_rank_one_matches_sherman_morrison() {
    let mut rng = SeededRng::new(11, 0);
    let phi = random_vec(4, &mut rng);
    let h = random_vec(4, &mut rng);
    let p = 0.3;
    for use_r in [false, true] {
        let ctx = TrakContext::new(&row_matrix(&phi), &[p], TrakOptions { use_r, projection: None }).unwrap();
        let w = if use_r { p * (1.0 - p) } else { 1.0 };
        for lambda in [0.01, 1.0] {
            let got = ctx.scores(&row_matrix(&h), lambda).unwrap().scores.get(0, 0);
            // (w φφᵀ + λI)⁻¹ φ = φ / (λ + w‖φ‖²)
            let want = (1.0 - p) * dot(&h, &phi) / (lambda + w * dot(&phi, &phi));
            assert!(rel_err(got, want) < 1e-12, "use_r = {use_r}, λ = {lambda}");
        }
    }
}

#[test]
fn trak_is_scale_free_without_regularization() {
    let mut rng = SeededRng::new(12, 0);
    let phi = random_matrix(30, 5, &mut rng);
    let g = random_matrix(4, 5, &mut rng);
    let probs: Vec<f64> = (0..30).map(|_| 0.05 + 0.9 * rng.uniform()).collect();
    for use_r in [false, true] {
        let opts = TrakOptions { use_r, projection: None };
        let a = TrakContext::new(&phi, &probs, opts.clone()).unwrap().scores(&g, 0.0).unwrap().scores;
        let c = 3.7;
        let b = TrakContext::new(&phi.scale(c), &probs, opts).unwrap().scores(&g.scale(c), 0.0).unwrap().scores;
        assert!(a.max_abs_diff(&b) < 1e-8);
    }
}

#[test]
fn trak_singular_middle_needs_regularization() {
    let mut rng = SeededRng::new(13, 0);
    let phi = random_matrix(3, 6, &mut rng);
    let g = random_matrix(2, 6, &mut rng);
    let ctx = TrakContext::new(&phi, &[0.5, 0.6, 0.7], TrakOptions::default()).unwrap();
    assert!(matches!(ctx.scores(&g, 0.0), Err(Error::Conditioning(_))));
    assert!(ctx.scores(&g, 1e-3).unwrap().scores.all_finite());
}

#[test]
fn explicit_identity_hessian() {
    let mut rng = SeededRng::new(14, 0);
    let g = random_matrix(3, 5, &mut rng);
    let j = random_matrix(7, 5, &mut rng);
    let lambda = 0.4;
    let got = explicit_scores(&DenseMatrix::identity(5), lambda, &g, &j).unwrap();
    let want = g.matmul_tr(&j).unwrap().scale(-1.0 / (1.0 + lambda));
    assert!(got.max_abs_diff(&want) < 1e-12);
}

#[test]
fn explicit_quadratic_model() {
    // L = ½(θᵀx − y)², so ∇L = (θᵀx − y)x, H = (1/n)Σ xxᵀ and ∇f = x for f = θᵀx
    let mut rng = SeededRng::new(15, 0);
    let (n, d) = (30, 4);
    let x = random_matrix(n, d, &mut rng);
    let y = random_vec(n, &mut rng);
    let theta = random_vec(d, &mut rng);
    let j = DenseMatrix::from_fn(n, d, |i, k| (dot(x.row(i), &theta) - y[i]) * x.get(i, k));
    let h = x.gram().scale(1.0 / n as f64);
    let test = random_matrix(5, d, &mut rng);
    let lambda = 1e-2;
    let got = explicit_scores(&h, lambda, &test, &j).unwrap();
    let inv = invert(&h.add_diagonal(lambda).unwrap());
    let want = DenseMatrix::from_fn(5, n, |t, i| {
        let s: f64 = (0..d)
            .map(|a| (0..d).map(|b| test.get(t, a) * inv.get(a, b) * j.get(i, b)).sum::<f64>())
            .sum();
        -s
    });
    assert!(got.max_abs_diff(&want) < 1e-10);
}

#[test]
fn explicit_large_lambda_limit() {
    let (train, test) = common::gaussian(40, 3, 3, 0.2, 16);
    let ckpt = fit_lr(&train, 0.0);
    let lambda = 1e6;
    let s = if_explicit(&ckpt, &train, &test, lambda, false).unwrap().scores.scale(lambda);
    let g = output_grads(&ckpt, &test).unwrap().0;
    let j = per_example_grads(&ckpt, &train).unwrap();
    let limit = g.matmul_tr(&j).unwrap().scale(-1.0);
    for (a, b) in s.data().iter().zip(limit.data()) {
        assert!(rel_err(*a, *b) < 1e-3);
    }
}

#[test]
fn explicit_guard_points_to_iterative_solvers() {
    let (train, test) = common::gaussian(5, 1, 40, 0.0, 17);
    let ckpt = random_checkpoint(ModelSpec::mlp(40, 60, 2), &mut SeededRng::new(17, 0));
    match if_explicit(&ckpt, &train, &test, 0.1, false) {
        Err(Error::Capability(msg)) => assert!(msg.contains("if-cg")),
        other => panic!("expected a capability error, got {other:?}"),
    }
    assert!(if_explicit(&ckpt, &train, &test, 0.1, true).is_ok());
}

#[test]
fn cg_and_lissa_agree_with_explicit() {
    let (train, test) = common::gaussian(80, 4, 6, 0.2, 18);
    let ckpt = fit_lr(&train, 0.0);
    assert!(ckpt.spec.param_count() <= 200);
    let lambda = 0.05;
    let explicit = if_explicit(&ckpt, &train, &test, lambda, false).unwrap().scores;
    let p = ckpt.spec.param_count();
    let cg = if_cg(&ckpt, &train, &test, lambda, p).unwrap().scores;
    assert!(explicit.max_abs_diff(&cg) < 1e-6, "CG deviation {:e}", explicit.max_abs_diff(&cg));

    let h = risk_hessian(&ckpt, &train, 0..p).unwrap();
    let mu_max = sym_eig(&h).unwrap().max_value();
    let eta = 1.5 * (mu_max + lambda);
    let g = output_grads(&ckpt, &test).unwrap().0;
    let j = per_example_grads(&ckpt, &train).unwrap();
    let rows: Vec<Vec<f64>> = (0..g.rows())
        .map(|t| lissa_solve(|v| risk_hvp(&ckpt, &train, v), g.row(t), lambda, eta, 5000).unwrap())
        .collect();
    let lissa = DenseMatrix::from_rows(&rows).unwrap().matmul_tr(&j).unwrap().scale(-1.0);
    assert!(explicit.max_abs_diff(&lissa) < 1e-4, "LiSSA deviation {:e}", explicit.max_abs_diff(&lissa));
}

#[test]
fn cg_terminates_on_small_spd_systems() {
    let mut rng = SeededRng::new(19, 0);
    let p = 10;
    let x = random_matrix(30, p, &mut rng);
    let a = x.gram().scale(1.0 / 30.0).add_diagonal(0.5).unwrap();
    let b = random_vec(p, &mut rng);
    let trace = conjugate_gradient(|v| a.matvec(v), &b, p).unwrap();
    let want = invert(&a).matvec(&b).unwrap();
    for (g, w) in trace.solution.iter().zip(&want) {
        assert!((g - w).abs() < 1e-6);
    }
    assert!(trace.residual_norms.len() <= p + 1);
    for w in trace.residual_norms.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "residual grew from {} to {}", w[0], w[1]);
    }
    assert!(matches!(conjugate_gradient(|v| a.matvec(v), &b, 0), Err(Error::Domain(_))));
}

#[test]
fn cg_rejects_zero_iterations() {
    let (train, test) = common::gaussian(20, 2, 3, 0.2, 20);
    let ckpt = fit_lr(&train, 0.0);
    assert!(matches!(if_cg(&ckpt, &train, &test, 0.1, 0), Err(Error::Domain(_))));
}

#[test]
fn lissa_scalar_iterates() {
    let hvp = |v: &[f64]| Ok(v.to_vec());
    // iterates 1, 1.5, 1.75, ... → 2; the estimate divides by η = 2
    assert_eq!(lissa_solve(hvp, &[1.0], 0.0, 2.0, 1).unwrap(), vec![0.75]);
    assert_eq!(lissa_solve(hvp, &[1.0], 0.0, 2.0, 2).unwrap(), vec![0.875]);
    let v = lissa_solve(hvp, &[1.0], 0.0, 2.0, 200).unwrap();
    assert!((v[0] - 1.0).abs() < 1e-15);
}

#[test]
fn lissa_diverges_when_scaling_is_too_small() {
    let diag = [10.0, 1.0, 0.1];
    let hvp = |v: &[f64]| Ok(v.iter().zip(&diag).map(|(a, b)| a * b).collect());
    let g = [1.0, 1.0, 1.0];
    assert!(matches!(lissa_solve(hvp, &g, 0.0, 2.0, 1000), Err(Error::Divergence(_))));
    let ok = lissa_solve(hvp, &g, 0.0, 11.0, 2000).unwrap();
    for (v, d) in ok.iter().zip(&diag) {
        assert!((v - 1.0 / d).abs() < 1e-6);
    }
}

#[test]
fn lissa_minibatch_is_reproducible() {
    let (train, test) = common::gaussian(60, 2, 3, 0.2, 21);
    let ckpt = fit_lr(&train, 0.0);
    let cfg = LissaConfig {
        recursion_depth: 200,
        batch_size: 10,
        ..LissaConfig::default()
    };
    let a = if_lissa(&ckpt, &train, &test, 0.1, &cfg).unwrap();
    let b = if_lissa(&ckpt, &train, &test, 0.1, &cfg).unwrap();
    assert_eq!(a.scores, b.scores);
    assert_eq!(a.hyperparams["scaling"], 5.0);
}

#[test]
fn tracin_single_and_summed_checkpoints() {
    let mut rng = SeededRng::new(22, 0);
    let g1 = random_matrix(3, 4, &mut rng);
    let h1 = random_matrix(6, 4, &mut rng);
    let g2 = random_matrix(3, 4, &mut rng);
    let h2 = random_matrix(6, 4, &mut rng);
    let (one, _) = tracin_from_grads(&[(g1.clone(), h1.clone())], &[1.0], false).unwrap();
    assert!(one.max_abs_diff(&g1.matmul_tr(&h1).unwrap()) < 1e-14);
    let (two, _) = tracin_from_grads(&[(g1.clone(), h1.clone()), (g2.clone(), h2.clone())], &[0.3, 0.7], false).unwrap();
    let (b, _) = tracin_from_grads(&[(g2, h2)], &[1.0], false).unwrap();
    let want = one.scale(0.3).add(&b.scale(0.7)).unwrap();
    assert!(two.max_abs_diff(&want) < 1e-14);
}

#[test]
fn tracin_normalized_scores_are_bounded() {
    let mut rng = SeededRng::new(23, 0);
    let mut pairs = vec![];
    for _ in 0..3 {
        let mut g = random_matrix(4, 5, &mut rng);
        g.row_mut(1).fill(0.0);
        pairs.push((g, random_matrix(7, 5, &mut rng)));
    }
    let rates = [0.1, 0.2, 0.4];
    let (s, skipped) = tracin_from_grads(&pairs, &rates, true).unwrap();
    let bound: f64 = rates.iter().sum();
    assert!(s.data().iter().all(|v| v.abs() <= bound + 1e-12));
    assert!(s.row(1).iter().all(|&v| v == 0.0));
    assert_eq!(skipped, 3 * 7);
}

#[test]
fn tracin_over_a_training_run() {
    let (train, test) = common::gaussian(50, 3, 3, 0.2, 24);
    let spec = ModelSpec::logistic(3, 2);
    let cfg = common::lr_config(0.0);
    let run = attune_core::train::train(&train, &spec, &cfg).unwrap();
    let k = run.epochs.len();
    let series = &run.epochs[k - 3..];
    let rates = &run.learning_rates[k - 3..];
    let out = tracin(series, rates, &train, &test, &TracinOptions::default()).unwrap();
    assert_eq!((out.matrix.n_test(), out.matrix.n_train()), (3, 50));
    assert_eq!(out.zero_norm_pairs, 0);
}
