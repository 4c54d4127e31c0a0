use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::SeededRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    LogisticRegression,
    Mlp,
}

/// Architecture of a small classifier. Both kinds include bias terms.
///
/// Parameter layout (row-major blocks, concatenated):
/// - logistic regression: `W (K×d)`, `b (K)`
/// - mlp: `W1 (H×d)`, `b1 (H)`, `W2 (K×H)`, `b2 (K)`
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    #[serde(default)]
    pub hidden_dim: usize,
    pub classes: usize,
}

impl ModelSpec {
    pub fn logistic(input_dim: usize, classes: usize) -> Self {
        Self {
            kind: ModelKind::LogisticRegression,
            input_dim,
            hidden_dim: 0,
            classes,
        }
    }

    pub fn mlp(input_dim: usize, hidden_dim: usize, classes: usize) -> Self {
        Self {
            kind: ModelKind::Mlp,
            input_dim,
            hidden_dim,
            classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.classes < 2 {
            return Err(Error::Domain(format!(
                "model needs input_dim >= 1 and classes >= 2, got {self:?}"
            )));
        }
        if self.kind == ModelKind::Mlp && self.hidden_dim == 0 {
            return Err(Error::Domain("mlp needs hidden_dim >= 1".into()));
        }
        Ok(())
    }

    /// Total parameter count `p`.
    pub fn param_count(&self) -> usize {
        let (d, h, k) = (self.input_dim, self.hidden_dim, self.classes);
        match self.kind {
            ModelKind::LogisticRegression => k * d + k,
            ModelKind::Mlp => h * d + h + k * h + k,
        }
    }

    /// Index range of the output layer's parameters.
    pub fn last_layer(&self) -> std::ops::Range<usize> {
        match self.kind {
            ModelKind::LogisticRegression => 0..self.param_count(),
            ModelKind::Mlp => {
                let start = self.hidden_dim * self.input_dim + self.hidden_dim;
                start..self.param_count()
            }
        }
    }

    pub fn is_convex(&self) -> bool {
        self.kind == ModelKind::LogisticRegression
    }

    /// Seed-derived initial parameters: small Gaussian weights, zero biases,
    /// `1/sqrt(fan_in)` scaling for the mlp.
    pub fn init_params(&self, rng: &mut SeededRng) -> Vec<f64> {
        let (d, h, k) = (self.input_dim, self.hidden_dim, self.classes);
        let mut theta = Vec::with_capacity(self.param_count());
        match self.kind {
            ModelKind::LogisticRegression => {
                theta.extend((0..k * d).map(|_| 0.01 * rng.normal()));
                theta.extend(std::iter::repeat_n(0.0, k));
            }
            ModelKind::Mlp => {
                let s1 = 1.0 / (d as f64).sqrt();
                let s2 = 1.0 / (h as f64).sqrt();
                theta.extend((0..h * d).map(|_| s1 * rng.normal()));
                theta.extend(std::iter::repeat_n(0.0, h));
                theta.extend((0..k * h).map(|_| s2 * rng.normal()));
                theta.extend(std::iter::repeat_n(0.0, k));
            }
        }
        theta
    }
}

/// Model parameters plus the training metadata that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub theta: Vec<f64>,
    pub epoch: usize,
    pub seed: u64,
}

impl Checkpoint {
    pub fn new(spec: ModelSpec, theta: Vec<f64>, epoch: usize, seed: u64) -> Result<Self> {
        spec.validate()?;
        if theta.len() != spec.param_count() {
            return Err(Error::Dimension(format!(
                "spec needs {} parameters, got {}",
                spec.param_count(),
                theta.len()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("checkpoint parameters must be finite".into()));
        }
        Ok(Self {
            spec,
            theta,
            epoch,
            seed,
        })
    }

    pub fn with_theta(&self, theta: Vec<f64>) -> Self {
        Self {
            spec: self.spec,
            theta,
            epoch: self.epoch,
            seed: self.seed,
        }
    }

    /// SHA-256 over spec and parameter bits.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.spec).expect("spec serializes"));
        for v in &self.theta {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}
