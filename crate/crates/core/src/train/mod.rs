//! Deterministic training, subset sampling, parallel retraining and checkpoint files.

mod cache;
mod config;
pub mod io;
mod fit;
mod plan;
mod retrain;

pub use cache::RetrainCache;
pub use config::{InitMode, Optimizer, TrainConfig};
pub use fit::{objective, objective_gradient, train, train_from, TrainOutcome};
pub use plan::{sample_subsets, SubsetPlan};
pub use retrain::{retrain_subsets, RetrainStats, Retrainer, SubsetOutputs};
