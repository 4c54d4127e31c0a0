//! Shared steps of every command: data, the full-data model, subset
//! retrains and attributors prepared for repeated scoring over λ.

use attune_core::attrib::{
    if_cg, if_explicit, if_lissa, iffim, tracin, AttributionMatrix, FimContext, LissaConfig,
    TracinOptions, TrakContext, TrakOptions,
};
use attune_core::model::output_grads;
use attune_core::select::{Surrogate, SurrogateReport};
use attune_core::tensor::make_projection;
use attune_core::train::{
    sample_subsets, train, RetrainCache, RetrainStats, Retrainer, SubsetOutputs, SubsetPlan,
    TrainConfig, TrainOutcome,
};
use attune_core::{Checkpoint, Dataset, DenseMatrix, ModelKind, ModelSpec, SeededRng};

use crate::config::{AttributorConfig, DatasetConfig, Regularization, RunConfig};
use crate::error::{CliError, Result};

/// RNG stream of random projections.
pub const PROJECTION_STREAM: u64 = 77;

#[derive(Debug)]
pub struct Pipeline {
    pub cfg: RunConfig,
    pub seed: u64,
    pub train: Dataset,
    /// The validation set `T`.
    pub test: Dataset,
    pub spec: ModelSpec,
}

impl Pipeline {
    /// Validates `cfg` and loads or generates the data; `cfg.seed` is the run seed.
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let seed = cfg.seed;
        let (train, test) = match &cfg.dataset {
            DatasetConfig::Synthetic(g) => g
                .generate(seed)
                .map_err(|e| CliError::Config(format!("dataset: {e}")))?,
            DatasetConfig::Files(f) => (Dataset::load(&f.dir, "train")?, Dataset::load(&f.dir, "test")?),
        };
        if test.len() < cfg.validation_size {
            return Err(CliError::Config(format!(
                "validation-size is {} but the test set holds {} examples",
                cfg.validation_size,
                test.len()
            )));
        }
        if test.dim() != train.dim() || test.classes() != train.classes() {
            return Err(CliError::Config(format!(
                "train is {}-dimensional with {} classes, test is {}-dimensional with {}",
                train.dim(),
                train.classes(),
                test.dim(),
                test.classes()
            )));
        }
        let idx: Vec<usize> = (0..cfg.validation_size).collect();
        let test = test.subset(&idx);
        let spec = match cfg.model.kind {
            ModelKind::LogisticRegression => ModelSpec::logistic(train.dim(), train.classes()),
            ModelKind::Mlp => ModelSpec::mlp(train.dim(), cfg.model.hidden_dim, train.classes()),
        };
        Ok(Self {
            cfg,
            seed,
            train,
            test,
            spec,
        })
    }

    /// The configured optimizer settings with the run seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.cfg.train.clone()
        }
    }

    pub fn fit(&self) -> Result<TrainOutcome> {
        log::info!(
            "training {:?} with {} parameters on {} examples",
            self.spec.kind,
            self.spec.param_count(),
            self.train.len()
        );
        Ok(train(&self.train, &self.spec, &self.train_config())?)
    }

    pub fn subset_size(&self) -> usize {
        ((self.cfg.subsets.fraction * self.train.len() as f64).round() as usize).max(1)
    }

    pub fn plan(&self) -> Result<SubsetPlan> {
        let s = &self.cfg.subsets;
        Ok(sample_subsets(self.train.len(), self.subset_size(), s.count, self.cfg.plan_seed())?)
    }

    pub fn cache(&self) -> Result<RetrainCache> {
        Ok(RetrainCache::new(self.cfg.cache_location())?)
    }

    /// Retrains every subset of `plan`, starting convex models from `base`.
    pub fn retrain(
        &self,
        base: &Checkpoint,
        plan: &SubsetPlan,
        cache: Option<&RetrainCache>,
    ) -> Result<(SubsetOutputs, RetrainStats)> {
        log::info!("retraining {} subsets of size {}", plan.s(), plan.a);
        let r = Retrainer::new(&self.train, self.spec, self.train_config())
            .base(base)
            .workers(self.cfg.workers)
            .cache(cache);
        let (outs, stats) = r.run(plan, &self.test)?;
        log::info!(
            "retrain: {} trained, {} cache hits, {} corrupt entries recomputed",
            stats.trained,
            stats.cache_hits,
            stats.corrupt_entries
        );
        Ok((outs, stats))
    }

    fn projection(&self, dim: Option<usize>) -> Result<Option<DenseMatrix>> {
        let p = self.spec.param_count();
        match dim {
            Some(d) if d < p => {
                let mut rng = SeededRng::new(self.seed, PROJECTION_STREAM);
                Ok(Some(make_projection(p, d, &mut rng)?))
            }
            Some(d) => {
                log::info!("projection dimension {d} >= parameter count {p}; not projecting");
                Ok(None)
            }
            None => Ok(None),
        }
    }

    /// Builds `attributor` at the checkpoint it asks for. With `need_selection`
    /// a Fisher context is decomposed for attributors that do not carry one.
    pub fn prepare(
        &self,
        attributor: &AttributorConfig,
        run: &TrainOutcome,
        need_selection: bool,
    ) -> Result<Prepared> {
        let ckpt = match attributor.training_epoch() {
            Some(k) => run
                .epochs
                .get(k - 1)
                .cloned()
                .ok_or_else(|| CliError::Config(format!("training-epoch {k} was not recorded")))?,
            None => run.checkpoint.clone(),
        };
        let (grads, _) = output_grads(&ckpt, &self.test)?;
        let fisher = |proj: Option<DenseMatrix>| FimContext::from_checkpoint(&ckpt, &self.train, proj);
        let (engine, selection) = match attributor {
            AttributorConfig::Iffim(p) => (Engine::Fim(fisher(self.projection(p.projection_dimension)?)?), None),
            AttributorConfig::Trak(p) => {
                let opts = TrakOptions {
                    use_r: p.use_r,
                    projection: self.projection(p.projection_dimension)?,
                };
                (Engine::Trak(TrakContext::from_checkpoint(&ckpt, &self.train, opts)?), None)
            }
            AttributorConfig::Tracin(p) => {
                let k = p.checkpoints.min(run.epochs.len());
                let start = run.epochs.len() - k;
                let opts = TracinOptions {
                    normalize: p.normalize,
                    projection: self.projection(p.projection_dimension)?,
                };
                let out = tracin(&run.epochs[start..], &run.learning_rates[start..], &self.train, &self.test, &opts)?;
                if out.zero_norm_pairs > 0 {
                    log::warn!("{} zero-norm gradient pairs skipped", out.zero_norm_pairs);
                }
                (Engine::Tracin(out.matrix), None)
            }
            _ => {
                let sel = if need_selection { Some(fisher(None)?) } else { None };
                (Engine::Hessian, sel)
            }
        };
        Ok(Prepared {
            config: attributor.clone(),
            ckpt,
            grads,
            engine,
            selection,
            train: self.train.clone(),
            test: self.test.clone(),
            seed: self.seed,
        })
    }
}

#[derive(Debug)]
enum Engine {
    Fim(FimContext),
    Trak(TrakContext),
    Tracin(AttributionMatrix),
    /// Explicit, CG and LiSSA recompute from the checkpoint at each λ.
    Hessian,
}

/// An attributor ready to score the validation set at any λ.
#[derive(Debug)]
pub struct Prepared {
    pub config: AttributorConfig,
    pub ckpt: Checkpoint,
    /// Raw output gradients of the validation set.
    pub grads: DenseMatrix,
    engine: Engine,
    selection: Option<FimContext>,
    train: Dataset,
    test: Dataset,
    seed: u64,
}

impl Prepared {
    /// The decomposed matrix whose spectrum drives λ selection and the
    /// gradients to evaluate ξ with.
    pub fn selection_context(&self) -> Result<(&FimContext, DenseMatrix)> {
        match &self.engine {
            Engine::Fim(ctx) => Ok((ctx, self.grads.clone())),
            Engine::Trak(ctx) => Ok((ctx.middle(), ctx.project(&self.grads)?)),
            Engine::Tracin(_) => Err(CliError::Config("tracin has no regularization to select".into())),
            Engine::Hessian => match &self.selection {
                Some(ctx) => Ok((ctx, self.grads.clone())),
                None => Err(CliError::Config("attributor was prepared without a selection context".into())),
            },
        }
    }

    pub fn spectrum(&self) -> Result<Vec<f64>> {
        Ok(self.selection_context()?.0.spectrum())
    }

    pub fn surrogate_report(&self, grid: &[f64], threshold: f64) -> Result<SurrogateReport> {
        let (ctx, g) = self.selection_context()?;
        let sur = Surrogate::new(ctx, &g)?;
        if sur.skipped() > 0 {
            log::warn!("{} validation points are degenerate and skipped", sur.skipped());
        }
        Ok(sur.report(grid, threshold)?)
    }

    /// ξ̄ at one λ with the number of skipped points.
    pub fn xi_bar(&self, lambda: f64) -> Result<(f64, usize)> {
        let (ctx, g) = self.selection_context()?;
        Ok(Surrogate::new(ctx, &g)?.xi_bar(lambda)?)
    }

    /// A fixed value, or λ̂ from `grid` for `auto`.
    pub fn resolve(&self, reg: Regularization, grid: &[f64], threshold: f64) -> Result<f64> {
        match reg {
            Regularization::Value(v) => Ok(v),
            Regularization::Auto => Ok(self.surrogate_report(grid, threshold)?.lambda_hat),
        }
    }

    /// Attribution scores of the validation set against the training set.
    pub fn scores(&self, lambda: f64) -> Result<AttributionMatrix> {
        let m = match (&self.engine, &self.config) {
            (Engine::Fim(ctx), _) => iffim(ctx, &self.grads, lambda)?,
            (Engine::Trak(ctx), _) => ctx.scores(&self.grads, lambda)?,
            (Engine::Tracin(m), _) => return Ok(m.clone()),
            (Engine::Hessian, AttributorConfig::IfExplicit(p)) => {
                if_explicit(&self.ckpt, &self.train, &self.test, lambda, p.last_layer)?
            }
            (Engine::Hessian, AttributorConfig::IfCg(p)) => {
                if_cg(&self.ckpt, &self.train, &self.test, lambda, p.max_iteration)?
            }
            (Engine::Hessian, AttributorConfig::IfLissa(p)) => {
                let cfg = LissaConfig {
                    scaling: p.scaling,
                    recursion_depth: p.recursion_depth,
                    batch_size: p.batch_size,
                    seed: self.seed,
                };
                if_lissa(&self.ckpt, &self.train, &self.test, lambda, &cfg)?
            }
            (Engine::Hessian, other) => unreachable!("{} has its own engine", other.id()),
        };
        Ok(m.with_checkpoint(self.ckpt.content_hash()))
    }
}
