//! Strict JSON run configuration and sweep specification.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use attune_core::model::GaussianMixtureSpec;
use attune_core::select::{GridSpec, DEFAULT_THRESHOLD};
use attune_core::train::TrainConfig;
use attune_core::ModelKind;
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use crate::error::{CliError, Result};

/// Threshold overrides are accepted in this band.
pub const THRESHOLD_RANGE: (f64, f64) = (0.4, 0.6);

/// Where the training and validation sets come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetConfig {
    Synthetic(GaussianMixtureSpec),
    /// A directory written by `gen-data`, holding `train.*` and `test.*`.
    Files(FilesSource),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilesSource {
    pub dir: PathBuf,
}

/// Input dimension and class count come from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ModelConfig {
    pub kind: ModelKind,
    #[serde(default = "default_hidden")]
    pub hidden_dim: usize,
}

fn default_hidden() -> usize {
    64
}

/// A fixed λ or `"auto"` for the surrogate-selected λ̂.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Regularization {
    Value(f64),
    Auto,
}

impl Serialize for Regularization {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Regularization::Value(v) => s.serialize_f64(*v),
            Regularization::Auto => s.serialize_str("auto"),
        }
    }
}

impl<'de> Deserialize<'de> for Regularization {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Regularization;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a non-negative number or \"auto\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Regularization, E> {
                Ok(Regularization::Value(v))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Regularization, E> {
                Ok(Regularization::Value(v as f64))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Regularization, E> {
                Ok(Regularization::Value(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Regularization, E> {
                if v == "auto" {
                    Ok(Regularization::Auto)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }
        }
        d.deserialize_any(V)
    }
}

impl fmt::Display for Regularization {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        match self {
            Regularization::Value(v) => write!(f, "{v}"),
            Regularization::Auto => f.write_str("auto"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct IffimParams {
    pub regularization: Regularization,
    pub projection_dimension: Option<usize>,
    /// Attribute at the end of this epoch instead of the final parameters.
    pub training_epoch: Option<usize>,
}

impl Default for IffimParams {
    fn default() -> Self {
        Self {
            regularization: Regularization::Auto,
            projection_dimension: None,
            training_epoch: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct TrakParams {
    pub regularization: Regularization,
    pub projection_dimension: Option<usize>,
    pub use_r: bool,
    pub training_epoch: Option<usize>,
}

impl Default for TrakParams {
    fn default() -> Self {
        Self {
            regularization: Regularization::Value(0.0),
            projection_dimension: Some(512),
            use_r: false,
            training_epoch: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ExplicitParams {
    pub regularization: Regularization,
    pub last_layer: bool,
    pub training_epoch: Option<usize>,
}

impl Default for ExplicitParams {
    fn default() -> Self {
        Self {
            regularization: Regularization::Value(1e-5),
            last_layer: false,
            training_epoch: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct CgParams {
    pub regularization: Regularization,
    pub max_iteration: usize,
    pub training_epoch: Option<usize>,
}

impl Default for CgParams {
    fn default() -> Self {
        Self {
            regularization: Regularization::Value(1e-2),
            max_iteration: 10,
            training_epoch: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct LissaParams {
    pub regularization: Regularization,
    pub scaling: f64,
    pub recursion_depth: usize,
    pub batch_size: usize,
    pub training_epoch: Option<usize>,
}

impl Default for LissaParams {
    fn default() -> Self {
        Self {
            regularization: Regularization::Value(1e-3),
            scaling: 5.0,
            recursion_depth: 1000,
            batch_size: 50,
            training_epoch: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct TracinParams {
    pub normalize: bool,
    pub projection_dimension: Option<usize>,
    /// Number of final epoch checkpoints summed over.
    pub checkpoints: usize,
}

impl Default for TracinParams {
    fn default() -> Self {
        Self {
            normalize: false,
            projection_dimension: None,
            checkpoints: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "kebab-case")]
pub enum AttributorConfig {
    Iffim(IffimParams),
    Trak(TrakParams),
    IfExplicit(ExplicitParams),
    IfCg(CgParams),
    IfLissa(LissaParams),
    Tracin(TracinParams),
}

impl Default for AttributorConfig {
    fn default() -> Self {
        AttributorConfig::Iffim(IffimParams::default())
    }
}

impl AttributorConfig {
    pub fn id(&self) -> &'static str {
        match self {
            AttributorConfig::Iffim(_) => "iffim",
            AttributorConfig::Trak(_) => "trak",
            AttributorConfig::IfExplicit(_) => "if-explicit",
            AttributorConfig::IfCg(_) => "if-cg",
            AttributorConfig::IfLissa(_) => "if-lissa",
            AttributorConfig::Tracin(_) => "tracin",
        }
    }

    /// `None` for attributors without a regularization strength.
    pub fn regularization(&self) -> Option<Regularization> {
        match self {
            AttributorConfig::Iffim(p) => Some(p.regularization),
            AttributorConfig::Trak(p) => Some(p.regularization),
            AttributorConfig::IfExplicit(p) => Some(p.regularization),
            AttributorConfig::IfCg(p) => Some(p.regularization),
            AttributorConfig::IfLissa(p) => Some(p.regularization),
            AttributorConfig::Tracin(_) => None,
        }
    }

    pub fn training_epoch(&self) -> Option<usize> {
        match self {
            AttributorConfig::Iffim(p) => p.training_epoch,
            AttributorConfig::Trak(p) => p.training_epoch,
            AttributorConfig::IfExplicit(p) => p.training_epoch,
            AttributorConfig::IfCg(p) => p.training_epoch,
            AttributorConfig::IfLissa(p) => p.training_epoch,
            AttributorConfig::Tracin(_) => None,
        }
    }

    /// A copy with one key replaced, validated like a config file entry.
    pub fn with_key(&self, key: &str, value: &Value) -> Result<Self> {
        if key == "id" {
            return Err(CliError::Config("the attributor id cannot be swept".into()));
        }
        let mut obj = serde_json::to_value(self)?;
        obj.as_object_mut()
            .expect("attributor serializes to an object")
            .insert(key.to_string(), value.clone());
        let text = serde_json::to_string(&obj)?;
        from_json(&text, "attributor")
    }

    fn validate(&self, epochs: Option<usize>) -> Result<()> {
        if let Some(Regularization::Value(v)) = self.regularization() {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(CliError::Config(format!("regularization must be finite and >= 0, got {v}")));
            }
        }
        if let (Some(k), Some(e)) = (self.training_epoch(), epochs) {
            if k == 0 || k > e {
                return Err(CliError::Config(format!("training-epoch must lie in 1..={e}, got {k}")));
            }
        }
        let positive = |name: &str, v: usize| {
            if v == 0 {
                Err(CliError::Config(format!("{name} must be at least 1")))
            } else {
                Ok(())
            }
        };
        match self {
            AttributorConfig::Iffim(IffimParams { projection_dimension: Some(d), .. })
            | AttributorConfig::Trak(TrakParams { projection_dimension: Some(d), .. })
            | AttributorConfig::Tracin(TracinParams { projection_dimension: Some(d), .. }) => {
                positive("projection-dimension", *d)?
            }
            _ => {}
        }
        match self {
            AttributorConfig::IfCg(p) => positive("max-iteration", p.max_iteration)?,
            AttributorConfig::IfLissa(p) => {
                if !(p.scaling > 0.0 && p.scaling.is_finite()) {
                    return Err(CliError::Config(format!("scaling must be positive, got {}", p.scaling)));
                }
                positive("recursion-depth", p.recursion_depth)?;
                positive("batch-size", p.batch_size)?;
            }
            AttributorConfig::Tracin(p) => positive("checkpoints", p.checkpoints)?,
            _ => {}
        }
        Ok(())
    }
}

/// Subset sampling for LDS ground truth: `s = count` subsets of size `round(fraction·n)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct SubsetConfig {
    pub fraction: f64,
    pub count: usize,
    /// Defaults to the run seed plus 100.
    pub seed: Option<u64>,
}

impl Default for SubsetConfig {
    fn default() -> Self {
        Self {
            fraction: 0.5,
            count: 50,
            seed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub attributor: AttributorConfig,
    #[serde(default)]
    pub subsets: SubsetConfig,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// `|T|`: the first this many test examples form the validation set.
    #[serde(default = "default_validation")]
    pub validation_size: usize,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Retrain cache; `ATTUNE_CACHE_DIR` takes precedence, then `<output-dir>/cache`.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub workers: Option<usize>,
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}
fn default_validation() -> usize {
    64
}
fn default_output() -> PathBuf {
    PathBuf::from("attune-out")
}

impl RunConfig {
    /// A synthetic-data config with every other field at its default.
    pub fn synthetic(data: GaussianMixtureSpec, kind: ModelKind) -> Self {
        Self {
            dataset: DatasetConfig::Synthetic(data),
            model: ModelConfig {
                kind,
                hidden_dim: default_hidden(),
            },
            train: TrainConfig::default(),
            attributor: AttributorConfig::default(),
            subsets: SubsetConfig::default(),
            grid: GridSpec::default(),
            threshold: default_threshold(),
            validation_size: default_validation(),
            output_dir: default_output(),
            cache_dir: None,
            seed: 0,
            workers: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train
            .validate()
            .map_err(|e| CliError::Config(format!("train: {e}")))?;
        self.attributor.validate(Some(self.train.epochs))?;
        if self.model.kind == ModelKind::Mlp && self.model.hidden_dim == 0 {
            return Err(CliError::Config("model hidden-dim must be at least 1".into()));
        }
        let (lo, hi) = THRESHOLD_RANGE;
        if !(self.threshold >= lo && self.threshold <= hi) {
            return Err(CliError::Config(format!(
                "threshold must lie in [{lo}, {hi}], got {}",
                self.threshold
            )));
        }
        if self.validation_size == 0 {
            return Err(CliError::Config("validation-size must be at least 1".into()));
        }
        let s = &self.subsets;
        if !(s.fraction > 0.0 && s.fraction <= 1.0) {
            return Err(CliError::Config(format!("subsets fraction must lie in (0, 1], got {}", s.fraction)));
        }
        if s.count < 3 {
            return Err(CliError::Config(format!("subsets count must be at least 3, got {}", s.count)));
        }
        if !matches!(self.grid, GridSpec::Auto { .. }) {
            self.grid
                .resolve(&[])
                .map_err(|e| CliError::Config(format!("grid: {e}")))?;
        } else if matches!(self.grid, GridSpec::Auto { points: 0 }) {
            return Err(CliError::Config("grid points must be at least 1".into()));
        }
        if self.workers == Some(0) {
            return Err(CliError::Config("workers must be at least 1".into()));
        }
        Ok(())
    }

    pub fn plan_seed(&self) -> u64 {
        self.subsets.seed.unwrap_or(self.seed.wrapping_add(100))
    }

    /// `ATTUNE_CACHE_DIR`, then `cache-dir`, then `<output-dir>/cache`.
    pub fn cache_location(&self) -> PathBuf {
        match std::env::var_os("ATTUNE_CACHE_DIR") {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self
                .cache_dir
                .clone()
                .unwrap_or_else(|| self.output_dir.join("cache")),
        }
    }
}

/// One swept hyperparameter: an attributor key and its values. For
/// `regularization` the values may be the string `"grid"`, meaning the
/// run's candidate grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub name: String,
    pub values: Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub base: RunConfig,
    pub axes: Vec<Axis>,
}

/// Values of one axis after validation.
#[derive(Clone, Debug, PartialEq)]
pub enum AxisValues {
    List(Vec<Value>),
    Grid,
}

impl Axis {
    pub fn values(&self) -> Result<AxisValues> {
        match &self.values {
            Value::String(s) if s == "grid" => {
                if self.name == "regularization" {
                    Ok(AxisValues::Grid)
                } else {
                    Err(CliError::Config(format!(
                        "axis `{}`: \"grid\" is only valid for regularization",
                        self.name
                    )))
                }
            }
            Value::Array(v) if !v.is_empty() => Ok(AxisValues::List(v.clone())),
            _ => Err(CliError::Config(format!(
                "axis `{}` needs a non-empty value list",
                self.name
            ))),
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.axes.is_empty() {
            return Err(CliError::Config("a sweep needs at least one axis".into()));
        }
        for (i, a) in self.axes.iter().enumerate() {
            if self.axes[..i].iter().any(|b| b.name == a.name) {
                return Err(CliError::Config(format!("axis `{}` appears twice", a.name)));
            }
            if let AxisValues::List(values) = a.values()? {
                for v in &values {
                    self.base
                        .attributor
                        .with_key(&a.name, v)?
                        .validate(Some(self.base.train.epochs))
                        .map_err(|e| CliError::Config(format!("axis `{}`: {e}", a.name)))?;
                }
            }
        }
        Ok(())
    }

    /// Number of cells; grid axes count the candidate grid's points.
    pub fn product_size(&self) -> usize {
        self.axes
            .iter()
            .map(|a| match a.values() {
                Ok(AxisValues::List(v)) => v.len(),
                Ok(AxisValues::Grid) => grid_len(&self.base.grid),
                Err(_) => 0,
            })
            .product()
    }
}

pub fn grid_len(grid: &GridSpec) -> usize {
    match grid {
        GridSpec::Auto { points } | GridSpec::LogRange { points, .. } => *points,
        GridSpec::Explicit { .. } => grid.resolve(&[]).map(|g| g.len()).unwrap_or(0),
    }
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let cfg: RunConfig = from_json(&read(path)?, &path.display().to_string())?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = from_json(text, "config")?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_sweep(path: &Path) -> Result<SweepSpec> {
    parse_sweep_str_named(&read(path)?, &path.display().to_string())
}

pub fn parse_sweep_str(text: &str) -> Result<SweepSpec> {
    parse_sweep_str_named(text, "sweep spec")
}

fn parse_sweep_str_named(text: &str, origin: &str) -> Result<SweepSpec> {
    let spec: SweepSpec = from_json(text, origin)?;
    spec.validate()?;
    Ok(spec)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| CliError::ReadConfig {
        path: path.to_path_buf(),
        source,
    })
}

fn from_json<T: serde::de::DeserializeOwned>(text: &str, origin: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| CliError::Config(format!("{origin}: {}", explain(&e))))
}

/// serde's message, plus the closest known key for unknown keys and variants.
fn explain(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    match suggestion(&msg) {
        Some(s) => format!("{msg} (did you mean `{s}`?)"),
        None => msg,
    }
}

fn suggestion(msg: &str) -> Option<String> {
    let rest = ["unknown field `", "unknown variant `"]
        .iter()
        .find_map(|p| msg.find(p).map(|i| &msg[i + p.len()..]))?;
    let end = rest.find('`')?;
    let bad = &rest[..end];
    let expected = &rest[end + 1..];
    let expected = &expected[expected.find("expected")?..];
    let expected = expected.split(" at line").next().unwrap_or(expected);
    expected
        .split('`')
        .skip(1)
        .step_by(2)
        .map(|c| (strsim::levenshtein(bad, c), c))
        .filter(|(d, c)| *d <= (c.len() / 3).max(2))
        .min()
        .map(|(_, c)| c.to_string())
}
