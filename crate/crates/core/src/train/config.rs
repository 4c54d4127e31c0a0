use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    Sgd,
    SgdMomentum,
}

/// Where subset retrains start from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    /// Start from the full-data optimum.
    Warm,
    /// Fresh seed-derived initialization per subset.
    Cold,
}

/// Optimization settings. The training objective is `R_A(θ) + ½·weight_decay·‖θ‖²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct TrainConfig {
    #[serde(default = "default_optimizer")]
    pub optimizer: Optimizer,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub weight_decay: f64,
    /// Full-gradient norm that counts as converged for convex models.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default)]
    pub seed: u64,
    /// Subset retrain initialization; `None` picks warm for convex models, cold otherwise.
    #[serde(default)]
    pub init: Option<InitMode>,
    /// Finish convex training with damped Newton steps until `tolerance` is met.
    #[serde(default = "default_true")]
    pub newton_polish: bool,
}

fn default_optimizer() -> Optimizer {
    Optimizer::SgdMomentum
}
fn default_lr() -> f64 {
    0.05
}
fn default_epochs() -> usize {
    50
}
fn default_batch() -> usize {
    64
}
fn default_tolerance() -> f64 {
    1e-8
}
fn default_momentum() -> f64 {
    0.9
}
fn default_true() -> bool {
    true
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::SgdMomentum,
            learning_rate: default_lr(),
            epochs: default_epochs(),
            batch_size: 64,
            weight_decay: 0.0,
            tolerance: 1e-8,
            momentum: 0.9,
            seed: 0,
            init: None,
            newton_polish: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Domain(format!(
                "learning-rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Domain("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Domain("batch-size must be at least 1".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Domain("weight-decay must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Domain("momentum must lie in [0, 1)".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Domain("tolerance must be positive".into()));
        }
        Ok(())
    }

    pub fn init_mode(&self, convex: bool) -> InitMode {
        self.init
            .unwrap_or(if convex { InitMode::Warm } else { InitMode::Cold })
    }
}
