use nalgebra::{DMatrix, DVector};

use super::config::{Optimizer, TrainConfig};
use crate::error::{Error, Result};
use crate::model::{risk, risk_gradient, risk_hessian, Checkpoint, Dataset, ModelSpec};
use crate::tensor::{dot, norm2, SeededRng};

const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1 << 32;
const MAX_NEWTON_PARAMS: usize = 2048;
const MAX_NEWTON_STEPS: usize = 60;

/// Result of one training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Final parameters (after Newton polishing when it ran).
    pub checkpoint: Checkpoint,
    /// Parameters at the end of each SGD epoch, `epochs[t]` after epoch `t + 1`.
    pub epochs: Vec<Checkpoint>,
    /// Step size used during each epoch.
    pub learning_rates: Vec<f64>,
    /// Full-data objective at the end of each epoch.
    pub losses: Vec<f64>,
    /// Full-data objective gradient norm at `checkpoint`.
    pub grad_norm: f64,
    pub newton_steps: usize,
}

/// `R(θ) + ½·wd·‖θ‖²` over all of `data`.
pub fn objective(ckpt: &Checkpoint, data: &Dataset, weight_decay: f64) -> Result<f64> {
    Ok(risk(ckpt, data)? + 0.5 * weight_decay * dot(&ckpt.theta, &ckpt.theta))
}

pub fn objective_gradient(ckpt: &Checkpoint, data: &Dataset, weight_decay: f64) -> Result<Vec<f64>> {
    let mut g = risk_gradient(ckpt, data, None)?;
    for (gi, t) in g.iter_mut().zip(&ckpt.theta) {
        *gi += weight_decay * t;
    }
    Ok(g)
}

/// Trains from the seed-derived initialization of `spec`.
pub fn train(data: &Dataset, spec: &ModelSpec, cfg: &TrainConfig) -> Result<TrainOutcome> {
    spec.validate()?;
    let theta = spec.init_params(&mut SeededRng::new(cfg.seed, INIT_STREAM));
    train_from(data, Checkpoint::new(*spec, theta, 0, cfg.seed)?, cfg)
}

/// Trains starting from `init`. Shuffles are drawn from `cfg.seed`, one
/// stream per epoch, so identical inputs give bit-identical results.
pub fn train_from(data: &Dataset, init: Checkpoint, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let spec = init.spec;
    let n = data.len();
    let p = spec.param_count();
    let mut theta = init.theta;
    let mut velocity = vec![0.0; p];
    let mut order: Vec<usize> = (0..n).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut losses = Vec::with_capacity(cfg.epochs);
    let momentum = match cfg.optimizer {
        Optimizer::Sgd => 0.0,
        Optimizer::SgdMomentum => cfg.momentum,
    };
    for epoch in 1..=cfg.epochs {
        let mut rng = SeededRng::new(cfg.seed, SHUFFLE_STREAM + epoch as u64);
        order.sort_unstable();
        rng.shuffle(&mut order);
        for batch in order.chunks(cfg.batch_size) {
            let current = Checkpoint {
                spec,
                theta: std::mem::take(&mut theta),
                epoch,
                seed: cfg.seed,
            };
            let mut g = risk_gradient(&current, data, Some(batch))?;
            theta = current.theta;
            for (gi, t) in g.iter_mut().zip(&theta) {
                *gi += cfg.weight_decay * t;
            }
            for ((t, v), gi) in theta.iter_mut().zip(velocity.iter_mut()).zip(&g) {
                *v = momentum * *v + gi;
                *t -= cfg.learning_rate * *v;
            }
            if theta.iter().any(|t| !t.is_finite()) {
                return Err(Error::Training {
                    epoch,
                    reason: "parameters became non-finite".into(),
                });
            }
        }
        let ckpt = Checkpoint {
            spec,
            theta: theta.clone(),
            epoch,
            seed: cfg.seed,
        };
        let loss = objective(&ckpt, data, cfg.weight_decay)?;
        if !loss.is_finite() {
            return Err(Error::Training {
                epoch,
                reason: format!("objective is {loss}"),
            });
        }
        losses.push(loss);
        epochs.push(ckpt);
    }
    let last = epochs.last().expect("at least one epoch").clone();
    let (checkpoint, newton_steps) = if cfg.newton_polish && spec.is_convex() && p <= MAX_NEWTON_PARAMS {
        newton_polish(data, last, cfg)?
    } else {
        (last, 0)
    };
    let grad_norm = norm2(&objective_gradient(&checkpoint, data, cfg.weight_decay)?);
    if cfg.newton_polish && spec.is_convex() && p <= MAX_NEWTON_PARAMS && !(grad_norm < cfg.tolerance) {
        return Err(Error::Conditioning(format!(
            "convex training stalled at gradient norm {grad_norm:.3e} (tolerance {:.1e})",
            cfg.tolerance
        )));
    }
    Ok(TrainOutcome {
        checkpoint,
        epochs,
        learning_rates: vec![cfg.learning_rate; cfg.epochs],
        losses,
        grad_norm,
        newton_steps,
    })
}

/// Damped Newton with backtracking on the full objective.
fn newton_polish(data: &Dataset, mut ckpt: Checkpoint, cfg: &TrainConfig) -> Result<(Checkpoint, usize)> {
    let wd = cfg.weight_decay;
    let p = ckpt.theta.len();
    let mut f = objective(&ckpt, data, wd)?;
    let mut g = objective_gradient(&ckpt, data, wd)?;
    let mut gn = norm2(&g);
    for step in 0..MAX_NEWTON_STEPS {
        if gn < cfg.tolerance {
            return Ok((ckpt, step));
        }
        let h = risk_hessian(&ckpt, data, 0..p)?;
        let trace: f64 = (0..p).map(|i| h.get(i, i)).sum();
        let mut shift = wd + 1e-12 * (trace / p as f64).max(f64::MIN_POSITIVE);
        let hm = DMatrix::from_row_slice(p, p, h.data());
        let rhs = DVector::from_column_slice(&g);
        let dir = loop {
            let mut m = hm.clone();
            for i in 0..p {
                m[(i, i)] += shift;
            }
            if let Some(ch) = m.cholesky() {
                break ch.solve(&rhs);
            }
            shift *= 10.0;
            if !shift.is_finite() {
                return Err(Error::Conditioning("Newton system could not be factored".into()));
            }
        };
        let slope = -dir.dot(&rhs);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..50 {
            let theta: Vec<f64> = ckpt.theta.iter().zip(dir.iter()).map(|(a, d)| a - t * d).collect();
            let cand = ckpt.with_theta(theta);
            let fc = objective(&cand, data, wd)?;
            let gc = objective_gradient(&cand, data, wd)?;
            let gnc = norm2(&gc);
            if fc.is_finite() && (fc <= f + 1e-4 * t * slope || (gnc < gn && fc <= f + 1e-12 * f.abs())) {
                ckpt = cand;
                f = fc;
                g = gc;
                gn = gnc;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Ok((ckpt, step));
        }
    }
    Ok((ckpt, MAX_NEWTON_STEPS))
}
