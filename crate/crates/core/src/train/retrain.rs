use rayon::prelude::*;

use super::cache::RetrainCache;
use super::config::{InitMode, TrainConfig};
use super::fit::{train, train_from};
use super::plan::SubsetPlan;
use crate::error::{Error, Result};
use crate::model::{evaluate_all, Checkpoint, Dataset, ModelSpec};
use crate::tensor::{derive_seed, DenseMatrix};

/// Models retrained on each subset of a plan and their test outputs.
#[derive(Clone, Debug)]
pub struct SubsetOutputs {
    pub plan: SubsetPlan,
    pub checkpoints: Vec<Checkpoint>,
    /// `s × |T|`, entry `(j, t)` is `f(z_t, θ*_{A_j})`.
    pub outputs: DenseMatrix,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RetrainStats {
    pub trained: usize,
    pub cache_hits: usize,
    /// Cache entries that failed verification and were recomputed.
    pub corrupt_entries: usize,
}

/// Configures and runs subset retraining.
#[derive(Clone, Debug)]
pub struct Retrainer<'a> {
    data: &'a Dataset,
    spec: ModelSpec,
    cfg: TrainConfig,
    base: Option<&'a Checkpoint>,
    workers: Option<usize>,
    cache: Option<&'a RetrainCache>,
    shared_seed: bool,
}

struct Task {
    ckpt: Checkpoint,
    outputs: Vec<f64>,
    hit: bool,
    corrupt: bool,
}

impl<'a> Retrainer<'a> {
    pub fn new(data: &'a Dataset, spec: ModelSpec, cfg: TrainConfig) -> Self {
        Self {
            data,
            spec,
            cfg,
            base: None,
            workers: None,
            cache: None,
            shared_seed: false,
        }
    }

    pub fn data(&self) -> &Dataset {
        self.data
    }

    /// Full-data optimum used as the warm-start point.
    pub fn base(mut self, ckpt: &'a Checkpoint) -> Self {
        self.base = Some(ckpt);
        self
    }

    /// Worker pool size; `None` uses the global pool.
    pub fn workers(mut self, workers: Option<usize>) -> Self {
        self.workers = workers;
        self
    }

    pub fn cache(mut self, cache: Option<&'a RetrainCache>) -> Self {
        self.cache = cache;
        self
    }

    /// Give every subset `cfg.seed` instead of a per-subset derived seed.
    pub fn shared_seed(mut self, shared: bool) -> Self {
        self.shared_seed = shared;
        self
    }

    pub fn run(&self, plan: &SubsetPlan, test: &Dataset) -> Result<(SubsetOutputs, RetrainStats)> {
        if plan.n != self.data.len() {
            return Err(Error::Dimension(format!(
                "plan covers {} examples but the dataset has {}",
                plan.n,
                self.data.len()
            )));
        }
        self.cfg.validate()?;
        let owned_base;
        let base = match (self.cfg.init_mode(self.spec.is_convex()), self.base) {
            (InitMode::Cold, _) => None,
            (InitMode::Warm, Some(b)) => Some(b),
            (InitMode::Warm, None) => {
                owned_base = train(self.data, &self.spec, &self.cfg)?.checkpoint;
                Some(&owned_base)
            }
        };
        let data_hash = self.cache.map(|_| self.data.content_hash());
        let init_hash = base.map_or_else(|| "cold".to_string(), |b| b.content_hash());
        let job = |j: usize| -> Result<Task> {
            self.one(j, &plan.subsets[j], base, test, data_hash.as_deref(), &init_hash)
                .map_err(|e| Error::Retrain {
                    subset: j,
                    source: Box::new(e),
                })
        };
        let results: Vec<Result<Task>> = match self.workers {
            Some(w) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(w.max(1))
                    .build()
                    .map_err(|e| Error::Capability(format!("cannot build worker pool: {e}")))?;
                pool.install(|| (0..plan.s()).into_par_iter().map(job).collect())
            }
            None => (0..plan.s()).into_par_iter().map(job).collect(),
        };
        let mut stats = RetrainStats::default();
        let mut checkpoints = Vec::with_capacity(plan.s());
        let mut rows = Vec::with_capacity(plan.s() * test.len());
        for r in results {
            let t = r?;
            if t.hit {
                stats.cache_hits += 1;
            } else {
                stats.trained += 1;
            }
            stats.corrupt_entries += t.corrupt as usize;
            rows.extend(t.outputs);
            checkpoints.push(t.ckpt);
        }
        let outputs = DenseMatrix::new(plan.s(), test.len(), rows)?;
        Ok((
            SubsetOutputs {
                plan: plan.clone(),
                checkpoints,
                outputs,
            },
            stats,
        ))
    }

    fn one(
        &self,
        j: usize,
        subset: &[usize],
        base: Option<&Checkpoint>,
        test: &Dataset,
        data_hash: Option<&str>,
        init_hash: &str,
    ) -> Result<Task> {
        let seed = if self.shared_seed {
            self.cfg.seed
        } else {
            derive_seed(self.cfg.seed, j as u64)
        };
        let cfg = TrainConfig {
            seed,
            ..self.cfg.clone()
        };
        let key = data_hash.map(|h| RetrainCache::key(h, &self.spec, &cfg, subset, init_hash, seed));
        let mut corrupt = false;
        if let (Some(cache), Some(key)) = (self.cache, key.as_deref()) {
            match cache.load(key) {
                Ok(Some(ckpt)) => {
                    let outputs = evaluate_all(&ckpt, test)?.iter().map(|e| e.output).collect();
                    return Ok(Task {
                        ckpt,
                        outputs,
                        hit: true,
                        corrupt: false,
                    });
                }
                Ok(None) => {}
                Err(Error::CacheCorrupt { .. }) => corrupt = true,
                Err(e) => return Err(e),
            }
        }
        let sub = self.data.subset(subset);
        let outcome = match base {
            Some(b) => train_from(&sub, b.clone(), &cfg)?,
            None => train(&sub, &self.spec, &cfg)?,
        };
        let ckpt = outcome.checkpoint;
        if let (Some(cache), Some(key)) = (self.cache, key.as_deref()) {
            cache.store(key, &ckpt)?;
        }
        let outputs = evaluate_all(&ckpt, test)?.iter().map(|e| e.output).collect();
        Ok(Task {
            ckpt,
            outputs,
            hit: false,
            corrupt,
        })
    }
}

/// Retrains on every subset of `plan` with default options and returns the
/// test outputs of each model.
pub fn retrain_subsets(
    data: &Dataset,
    spec: &ModelSpec,
    cfg: &TrainConfig,
    plan: &SubsetPlan,
    test: &Dataset,
) -> Result<SubsetOutputs> {
    Retrainer::new(data, *spec, cfg.clone())
        .run(plan, test)
        .map(|(out, _)| out)
}
