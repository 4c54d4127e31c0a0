use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Example};
use super::spec::{Checkpoint, ModelKind, ModelSpec};
use crate::error::{Error, Result};
use crate::tensor::{axpy, DenseMatrix};

/// Probability clamp applied before forming log-odds.
pub const PROB_CLAMP: f64 = 1e-12;

/// Per-example loss `L`, correct-class probability `p = e^{-L}` and
/// log-odds output `f = ln(p / (1 - p))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForwardEval {
    pub loss: f64,
    pub prob: f64,
    pub output: f64,
}

/// `∇f` for one example, with the probability it was formed at.
#[derive(Clone, Debug)]
pub struct OutputGrad {
    pub grad: Vec<f64>,
    /// Clamped `p`.
    pub prob: f64,
    /// True when `p` hit the clamp, so `∇f` was formed with a clamped denominator.
    pub saturated: bool,
}

struct Forward {
    hidden: Vec<f64>,
    probs: Vec<f64>,
    log_partition: f64,
    logits: Vec<f64>,
}

fn check_example(spec: &ModelSpec, z: &Example<'_>) -> Result<()> {
    if z.x.len() != spec.input_dim {
        return Err(Error::Domain(format!(
            "example has {} features, model expects {}",
            z.x.len(),
            spec.input_dim
        )));
    }
    if z.y >= spec.classes {
        return Err(Error::Domain(format!(
            "label {} outside [0, {})",
            z.y, spec.classes
        )));
    }
    Ok(())
}

pub(crate) fn check_dataset(spec: &ModelSpec, data: &Dataset) -> Result<()> {
    if data.dim() != spec.input_dim || data.classes() != spec.classes {
        return Err(Error::Dimension(format!(
            "dataset is {}-dimensional with {} classes, model expects {} and {}",
            data.dim(),
            data.classes(),
            spec.input_dim,
            spec.classes
        )));
    }
    Ok(())
}

fn forward(spec: &ModelSpec, theta: &[f64], x: &[f64]) -> Forward {
    let (d, h, k) = (spec.input_dim, spec.hidden_dim, spec.classes);
    let (hidden, logits): (Vec<f64>, Vec<f64>) = match spec.kind {
        ModelKind::LogisticRegression => {
            let (w, b) = theta.split_at(k * d);
            let logits = (0..k)
                .map(|c| crate::tensor::dot(&w[c * d..(c + 1) * d], x) + b[c])
                .collect();
            (Vec::new(), logits)
        }
        ModelKind::Mlp => {
            let (w1, rest) = theta.split_at(h * d);
            let (b1, rest) = rest.split_at(h);
            let (w2, b2) = rest.split_at(k * h);
            let hidden: Vec<f64> = (0..h)
                .map(|j| (crate::tensor::dot(&w1[j * d..(j + 1) * d], x) + b1[j]).tanh())
                .collect();
            let logits = (0..k)
                .map(|c| crate::tensor::dot(&w2[c * h..(c + 1) * h], &hidden) + b2[c])
                .collect();
            (hidden, logits)
        }
    };
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|o| (o - m).exp()).sum();
    let log_partition = m + z.ln();
    let probs = logits.iter().map(|o| (o - log_partition).exp()).collect();
    Forward {
        hidden,
        probs,
        log_partition,
        logits,
    }
}

/// Vector-Jacobian product of the logits: `(∂o/∂θ)ᵀ delta`.
fn backprop(spec: &ModelSpec, theta: &[f64], x: &[f64], fw: &Forward, delta: &[f64]) -> Vec<f64> {
    let (d, h, k) = (spec.input_dim, spec.hidden_dim, spec.classes);
    let mut g = vec![0.0; spec.param_count()];
    match spec.kind {
        ModelKind::LogisticRegression => {
            let (gw, gb) = g.split_at_mut(k * d);
            for c in 0..k {
                axpy(delta[c], x, &mut gw[c * d..(c + 1) * d]);
                gb[c] = delta[c];
            }
        }
        ModelKind::Mlp => {
            let w2 = &theta[h * d + h..h * d + h + k * h];
            let (gw1, rest) = g.split_at_mut(h * d);
            let (gb1, rest) = rest.split_at_mut(h);
            let (gw2, gb2) = rest.split_at_mut(k * h);
            let mut dh = vec![0.0; h];
            for c in 0..k {
                axpy(delta[c], &fw.hidden, &mut gw2[c * h..(c + 1) * h]);
                gb2[c] = delta[c];
                axpy(delta[c], &w2[c * h..(c + 1) * h], &mut dh);
            }
            for j in 0..h {
                let dpre = dh[j] * (1.0 - fw.hidden[j] * fw.hidden[j]);
                axpy(dpre, x, &mut gw1[j * d..(j + 1) * d]);
                gb1[j] = dpre;
            }
        }
    }
    g
}

fn eval_from_forward(fw: &Forward, y: usize) -> ForwardEval {
    let loss = (fw.log_partition - fw.logits[y]).max(0.0);
    // f = o_y - logsumexp(o_{-y}), clamped to the log-odds of [ε, 1-ε]
    let others = fw
        .logits
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != y)
        .map(|(_, &o)| o);
    let m = others.clone().fold(f64::NEG_INFINITY, f64::max);
    let lse_others = m + others.map(|o| (o - m).exp()).sum::<f64>().ln();
    let f_max = ((1.0 - PROB_CLAMP) / PROB_CLAMP).ln();
    let output = (fw.logits[y] - lse_others).clamp(-f_max, f_max);
    let prob = (-loss).exp().clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    ForwardEval { loss, prob, output }
}

/// Loss, probability and log-odds output of one example.
pub fn forward_eval(ckpt: &Checkpoint, z: Example<'_>) -> Result<ForwardEval> {
    check_example(&ckpt.spec, &z)?;
    let fw = forward(&ckpt.spec, &ckpt.theta, z.x);
    Ok(eval_from_forward(&fw, z.y))
}

/// Cross-entropy gradient `∇L(z, θ)`.
pub fn loss_grad(ckpt: &Checkpoint, z: Example<'_>) -> Result<Vec<f64>> {
    check_example(&ckpt.spec, &z)?;
    let fw = forward(&ckpt.spec, &ckpt.theta, z.x);
    let mut delta = fw.probs.clone();
    delta[z.y] -= 1.0;
    Ok(backprop(&ckpt.spec, &ckpt.theta, z.x, &fw, &delta))
}

/// `∇f = -∇L / (1 - p)` with `p` clamped to `[ε, 1 - ε]`.
pub fn grad_output_f(ckpt: &Checkpoint, z: Example<'_>) -> Result<OutputGrad> {
    check_example(&ckpt.spec, &z)?;
    let fw = forward(&ckpt.spec, &ckpt.theta, z.x);
    // 1 - p accumulated from the other classes keeps precision when p ≈ 1
    let q_raw: f64 = fw
        .probs
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != z.y)
        .map(|(_, &s)| s)
        .sum();
    let q = q_raw.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let saturated = q != q_raw;
    let delta: Vec<f64> = fw
        .probs
        .iter()
        .enumerate()
        .map(|(c, &s)| {
            let g = if c == z.y { s - 1.0 } else { s };
            -g / q
        })
        .collect();
    let grad = backprop(&ckpt.spec, &ckpt.theta, z.x, &fw, &delta);
    Ok(OutputGrad {
        grad,
        prob: 1.0 - q,
        saturated,
    })
}

/// Rows `∇L(z_i, θ)ᵀ` for every example: the `n×p` matrix `J`.
pub fn per_example_grads(ckpt: &Checkpoint, data: &Dataset) -> Result<DenseMatrix> {
    check_dataset(&ckpt.spec, data)?;
    let p = ckpt.spec.param_count();
    let rows: Vec<Vec<f64>> = (0..data.len())
        .into_par_iter()
        .map(|i| loss_grad(ckpt, data.example(i)))
        .collect::<Result<_>>()?;
    let mut flat = Vec::with_capacity(rows.len() * p);
    for r in rows {
        flat.extend(r);
    }
    DenseMatrix::new(data.len(), p, flat)
}

/// Rows `∇f(z_i, θ)ᵀ`, plus the number of saturated examples.
pub fn output_grads(ckpt: &Checkpoint, data: &Dataset) -> Result<(DenseMatrix, usize)> {
    check_dataset(&ckpt.spec, data)?;
    let p = ckpt.spec.param_count();
    let rows: Vec<OutputGrad> = (0..data.len())
        .into_par_iter()
        .map(|i| grad_output_f(ckpt, data.example(i)))
        .collect::<Result<_>>()?;
    let saturated = rows.iter().filter(|r| r.saturated).count();
    let mut flat = Vec::with_capacity(rows.len() * p);
    for r in rows {
        flat.extend(r.grad);
    }
    Ok((DenseMatrix::new(data.len(), p, flat)?, saturated))
}

/// Forward evaluations for every example.
pub fn evaluate_all(ckpt: &Checkpoint, data: &Dataset) -> Result<Vec<ForwardEval>> {
    check_dataset(&ckpt.spec, data)?;
    (0..data.len())
        .into_par_iter()
        .map(|i| forward_eval(ckpt, data.example(i)))
        .collect()
}

const REDUCE_CHUNK: usize = 32;

/// Sums per-example vectors with a summation order fixed by `idx` alone, so
/// results are bit-identical for any thread count.
fn chunked_sum<F>(idx: &[usize], p: usize, f: F) -> Result<Vec<f64>>
where
    F: Fn(usize) -> Result<Vec<f64>> + Sync,
{
    let partials: Vec<Vec<f64>> = idx
        .par_chunks(REDUCE_CHUNK)
        .map(|chunk| {
            let mut acc = vec![0.0; p];
            for &i in chunk {
                axpy(1.0, &f(i)?, &mut acc);
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = vec![0.0; p];
    for part in &partials {
        axpy(1.0, part, &mut total);
    }
    Ok(total)
}

/// Empirical risk `R(θ) = (1/n) Σ L(z_i, θ)`.
pub fn risk(ckpt: &Checkpoint, data: &Dataset) -> Result<f64> {
    let evals = evaluate_all(ckpt, data)?;
    Ok(evals.iter().map(|e| e.loss).sum::<f64>() / data.len() as f64)
}

/// `∇R(θ)` over the examples at `idx` (all when `None`).
pub fn risk_gradient(ckpt: &Checkpoint, data: &Dataset, idx: Option<&[usize]>) -> Result<Vec<f64>> {
    check_dataset(&ckpt.spec, data)?;
    let all: Vec<usize>;
    let idx = match idx {
        Some(i) => i,
        None => {
            all = (0..data.len()).collect();
            &all
        }
    };
    let p = ckpt.spec.param_count();
    let sum = chunked_sum(idx, p, |i| loss_grad(ckpt, data.example(i)))?;
    let inv = 1.0 / idx.len().max(1) as f64;
    Ok(sum.into_iter().map(|v| v * inv).collect())
}

/// Exact per-example Hessian-vector product `∇²L(z, θ) v` (forward-over-reverse).
pub fn hvp(ckpt: &Checkpoint, z: Example<'_>, v: &[f64]) -> Result<Vec<f64>> {
    check_example(&ckpt.spec, &z)?;
    let spec = &ckpt.spec;
    if v.len() != spec.param_count() {
        return Err(Error::Dimension(format!(
            "direction has length {}, model has {} parameters",
            v.len(),
            spec.param_count()
        )));
    }
    let theta = &ckpt.theta;
    let (d, h, k) = (spec.input_dim, spec.hidden_dim, spec.classes);
    let fw = forward(spec, theta, z.x);
    let s = &fw.probs;
    let mut delta = s.clone();
    delta[z.y] -= 1.0;

    // R{o}: directional derivative of the logits
    let (r_hidden, r_logits) = match spec.kind {
        ModelKind::LogisticRegression => {
            let (vw, vb) = v.split_at(k * d);
            let ro = (0..k)
                .map(|c| crate::tensor::dot(&vw[c * d..(c + 1) * d], z.x) + vb[c])
                .collect::<Vec<_>>();
            (Vec::new(), ro)
        }
        ModelKind::Mlp => {
            let (v1, rest) = v.split_at(h * d);
            let (c1, rest) = rest.split_at(h);
            let (v2, c2) = rest.split_at(k * h);
            let w2 = &theta[h * d + h..h * d + h + k * h];
            let rh: Vec<f64> = (0..h)
                .map(|j| {
                    let rpre = crate::tensor::dot(&v1[j * d..(j + 1) * d], z.x) + c1[j];
                    (1.0 - fw.hidden[j] * fw.hidden[j]) * rpre
                })
                .collect();
            let ro = (0..k)
                .map(|c| {
                    crate::tensor::dot(&v2[c * h..(c + 1) * h], &fw.hidden)
                        + crate::tensor::dot(&w2[c * h..(c + 1) * h], &rh)
                        + c2[c]
                })
                .collect::<Vec<_>>();
            (rh, ro)
        }
    };
    // R{δo} = (diag(s) - s sᵀ) R{o}
    let sro: f64 = crate::tensor::dot(s, &r_logits);
    let r_delta: Vec<f64> = s.iter().zip(&r_logits).map(|(si, ro)| si * (ro - sro)).collect();

    // Gauss-Newton part: backprop R{δo} through the unperturbed network
    let mut out = backprop(spec, theta, z.x, &fw, &r_delta);
    if spec.kind == ModelKind::Mlp {
        // curvature of the network itself, driven by δo
        let w2 = &theta[h * d + h..h * d + h + k * h];
        let v2 = &v[h * d + h..h * d + h + k * h];
        let mut dh = vec![0.0; h];
        let mut v2t_delta = vec![0.0; h];
        for c in 0..k {
            axpy(delta[c], &w2[c * h..(c + 1) * h], &mut dh);
            axpy(delta[c], &v2[c * h..(c + 1) * h], &mut v2t_delta);
        }
        let (ow1, rest) = out.split_at_mut(h * d);
        let (ob1, rest) = rest.split_at_mut(h);
        let (ow2, _) = rest.split_at_mut(k * h);
        for c in 0..k {
            axpy(delta[c], &r_hidden, &mut ow2[c * h..(c + 1) * h]);
        }
        for j in 0..h {
            let hj = fw.hidden[j];
            let extra = v2t_delta[j] * (1.0 - hj * hj) - 2.0 * dh[j] * hj * r_hidden[j];
            axpy(extra, z.x, &mut ow1[j * d..(j + 1) * d]);
            ob1[j] += extra;
        }
    }
    Ok(out)
}

/// Mean Hessian-vector product over the examples at `idx`.
pub fn batch_hvp(ckpt: &Checkpoint, data: &Dataset, idx: &[usize], v: &[f64]) -> Result<Vec<f64>> {
    let p = ckpt.spec.param_count();
    let mut acc = vec![0.0; p];
    for &i in idx {
        axpy(1.0, &hvp(ckpt, data.example(i), v)?, &mut acc);
    }
    let inv = 1.0 / idx.len().max(1) as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    Ok(acc)
}

/// Full-data Hessian-vector product `∇²R(θ) v`, parallel over examples.
pub fn risk_hvp(ckpt: &Checkpoint, data: &Dataset, v: &[f64]) -> Result<Vec<f64>> {
    check_dataset(&ckpt.spec, data)?;
    let p = ckpt.spec.param_count();
    let idx: Vec<usize> = (0..data.len()).collect();
    let sum = chunked_sum(&idx, p, |i| hvp(ckpt, data.example(i), v))?;
    let inv = 1.0 / data.len() as f64;
    Ok(sum.into_iter().map(|x| x * inv).collect())
}

/// Dense `∇²R(θ)` restricted to the parameter block `range`.
///
/// Logistic regression uses the closed form; the mlp assembles columns from
/// Hessian-vector products.
pub fn risk_hessian(
    ckpt: &Checkpoint,
    data: &Dataset,
    range: std::ops::Range<usize>,
) -> Result<DenseMatrix> {
    check_dataset(&ckpt.spec, data)?;
    let p = ckpt.spec.param_count();
    if range.end > p || range.is_empty() {
        return Err(Error::Dimension(format!(
            "parameter block {range:?} outside 0..{p}"
        )));
    }
    if ckpt.spec.kind == ModelKind::LogisticRegression {
        let full = logistic_hessian(ckpt, data);
        if range == (0..p) {
            return Ok(full);
        }
        let m = range.len();
        return Ok(DenseMatrix::from_fn(m, m, |i, j| {
            full.get(range.start + i, range.start + j)
        }));
    }
    let m = range.len();
    let cols: Vec<Vec<f64>> = (0..m)
        .map(|j| {
            let mut e = vec![0.0; p];
            e[range.start + j] = 1.0;
            risk_hvp(ckpt, data, &e).map(|c| c[range.clone()].to_vec())
        })
        .collect::<Result<_>>()?;
    let h = DenseMatrix::from_fn(m, m, |i, j| 0.5 * (cols[j][i] + cols[i][j]));
    Ok(h)
}

/// `(1/n) Σ (diag(s) − s sᵀ) ⊗ x̃ x̃ᵀ` in the `W, b` layout.
fn logistic_hessian(ckpt: &Checkpoint, data: &Dataset) -> DenseMatrix {
    let spec = &ckpt.spec;
    let (d, k, n) = (spec.input_dim, spec.classes, data.len());
    let p = spec.param_count();
    let probs: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| forward(spec, &ckpt.theta, data.features().row(i)).probs)
        .collect();
    // augmented features x̃ = [x, 1]
    let xt = DenseMatrix::from_fn(n, d + 1, |i, j| {
        if j < d {
            data.features().get(i, j)
        } else {
            1.0
        }
    });
    let index = |c: usize, j: usize| if j < d { c * d + j } else { k * d + c };
    let mut hess = DenseMatrix::zeros(p, p);
    for a in 0..k {
        for b in a..k {
            let weights: Vec<f64> = probs
                .iter()
                .map(|s| {
                    let kron = if a == b { s[a] } else { 0.0 };
                    (kron - s[a] * s[b]) / n as f64
                })
                .collect();
            let weighted = DenseMatrix::from_fn(n, d + 1, |i, j| weights[i] * xt.get(i, j));
            let block = xt.tr_matmul(&weighted).expect("shapes agree");
            for j in 0..=d {
                for m in 0..=d {
                    let v = block.get(j, m);
                    hess.set(index(a, j), index(b, m), v);
                    hess.set(index(b, m), index(a, j), v);
                }
            }
        }
    }
    hess
}
