#![allow(dead_code)]

use std::path::Path;

use attune_cli::config::{AttributorConfig, Axis, IffimParams, RunConfig, SweepSpec, TrakParams};
use attune_core::model::GaussianMixtureSpec;
use attune_core::train::{train, TrainConfig};
use attune_core::{Checkpoint, Dataset, DenseMatrix, ModelKind, ModelSpec, SeededRng};

pub fn random_matrix(rows: usize, cols: usize, rng: &mut SeededRng) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.normal())
}

pub fn random_vec(n: usize, rng: &mut SeededRng) -> Vec<f64> {
    (0..n).map(|_| rng.normal()).collect()
}

/// Two noisy concentric rings in the plane; never linearly separable.
pub fn rings(n: usize, seed: u64) -> Dataset {
    let mut rng = SeededRng::new(seed, 11);
    let mut x = Vec::with_capacity(2 * n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let r = if label == 0 { 1.0 } else { 2.5 } + 0.1 * rng.normal();
        let a = 2.0 * std::f64::consts::PI * (i as f64 + 0.2 * rng.normal()) / n as f64;
        x.push(r * a.cos() + 0.2);
        x.push(r * a.sin() - 0.1);
        y.push(label);
    }
    Dataset::new(DenseMatrix::new(n, 2, x).unwrap(), y, 2, "rings").unwrap()
}

pub fn lr_config(weight_decay: f64) -> TrainConfig {
    TrainConfig {
        learning_rate: 0.05,
        epochs: 10,
        batch_size: 16,
        weight_decay,
        tolerance: 1e-11,
        ..TrainConfig::default()
    }
}

pub fn fit_lr(data: &Dataset, weight_decay: f64) -> Checkpoint {
    let spec = ModelSpec::logistic(data.dim(), data.classes());
    train(data, &spec, &lr_config(weight_decay)).unwrap().checkpoint
}

pub fn random_checkpoint(spec: ModelSpec, rng: &mut SeededRng) -> Checkpoint {
    let theta = (0..spec.param_count()).map(|_| 0.5 * rng.normal()).collect();
    Checkpoint::new(spec, theta, 0, 0).unwrap()
}

/// Dense inverse by Gauss-Jordan elimination with partial pivoting.
pub fn invert(a: &DenseMatrix) -> DenseMatrix {
    let n = a.rows();
    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row = a.row(i).to_vec();
            row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            row
        })
        .collect();
    for c in 0..n {
        let piv = (c..n)
            .max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))
            .unwrap();
        m.swap(c, piv);
        let d = m[c][c];
        for v in m[c].iter_mut() {
            *v /= d;
        }
        for r in 0..n {
            if r != c {
                let f = m[r][c];
                if f != 0.0 {
                    for k in 0..2 * n {
                        m[r][k] -= f * m[c][k];
                    }
                }
            }
        }
    }
    DenseMatrix::from_fn(n, n, |i, j| m[i][n + j])
}

/// The desk-scale end-to-end setting: 1000 training points in 50 dimensions,
/// |T| = 64, 50 subsets, 25-point automatic grid, unregularized training.
pub fn desk_config(kind: ModelKind, attributor: AttributorConfig, fraction: f64, seed: u64, dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::synthetic(GaussianMixtureSpec::default(), kind);
    cfg.train = TrainConfig {
        learning_rate: 0.05,
        epochs: 10,
        ..TrainConfig::default()
    };
    cfg.attributor = attributor;
    cfg.subsets.fraction = fraction;
    cfg.seed = seed;
    cfg.output_dir = dir.join("out");
    cfg.cache_dir = Some(dir.join("cache"));
    cfg
}

pub fn iffim(projection: Option<usize>) -> AttributorConfig {
    AttributorConfig::Iffim(IffimParams {
        projection_dimension: projection,
        ..IffimParams::default()
    })
}

pub fn trak() -> AttributorConfig {
    AttributorConfig::Trak(TrakParams::default())
}

pub fn lambda_sweep(base: RunConfig) -> SweepSpec {
    SweepSpec {
        base,
        axes: vec![Axis {
            name: "regularization".into(),
            values: serde_json::json!("grid"),
        }],
    }
}
