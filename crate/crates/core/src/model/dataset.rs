use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::io::{read_matrix, write_atomic, write_matrix};
use crate::tensor::{DenseMatrix, SeededRng};

/// A labelled training or test set.
#[derive(Clone, Debug)]
pub struct Dataset {
    features: DenseMatrix,
    labels: Vec<usize>,
    classes: usize,
    name: String,
}

/// One labelled example borrowed from a [`Dataset`].
#[derive(Clone, Copy, Debug)]
pub struct Example<'a> {
    pub x: &'a [f64],
    pub y: usize,
}

impl Dataset {
    pub fn new(
        features: DenseMatrix,
        labels: Vec<usize>,
        classes: usize,
        name: impl Into<String>,
    ) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::Domain("dataset must contain at least one example".into()));
        }
        if labels.len() != features.rows() {
            return Err(Error::Dimension(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if classes < 2 {
            return Err(Error::Domain(format!("need at least 2 classes, got {classes}")));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Domain(format!("label {bad} outside [0, {classes})")));
        }
        if !features.all_finite() {
            return Err(Error::Domain("features must be finite".into()));
        }
        Ok(Self {
            features,
            labels,
            classes,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn example(&self, i: usize) -> Example<'_> {
        Example {
            x: self.features.row(i),
            y: self.labels[i],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Example<'_>> + '_ {
        (0..self.len()).map(move |i| self.example(i))
    }

    /// The examples at `idx`, in order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            name: self.name.clone(),
        }
    }

    /// Content hash over features, labels and class count.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update((self.len() as u64).to_le_bytes());
        h.update((self.dim() as u64).to_le_bytes());
        h.update((self.classes as u64).to_le_bytes());
        for v in self.features.data() {
            h.update(v.to_le_bytes());
        }
        for &y in &self.labels {
            h.update((y as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Writes `<stem>.atrm`, `<stem>.labels` and `<stem>.json` under `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_matrix(&dir.join(format!("{stem}.atrm")), &self.features)?;
        let mut labels = String::with_capacity(self.len() * 2);
        for y in &self.labels {
            labels.push_str(&y.to_string());
            labels.push('\n');
        }
        write_atomic(&dir.join(format!("{stem}.labels")), labels.as_bytes())?;
        let meta = DatasetMeta {
            name: self.name.clone(),
            n: self.len(),
            d: self.dim(),
            k: self.classes,
        };
        write_atomic(
            &dir.join(format!("{stem}.json")),
            serde_json::to_string_pretty(&meta)?.as_bytes(),
        )?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let meta_path = dir.join(format!("{stem}.json"));
        let meta: DatasetMeta = serde_json::from_slice(&fs::read(&meta_path)?)?;
        let features = read_matrix(&dir.join(format!("{stem}.atrm")))?;
        let labels_path = dir.join(format!("{stem}.labels"));
        let labels = parse_labels(&labels_path, &fs::read_to_string(&labels_path)?)?;
        if features.rows() != meta.n || features.cols() != meta.d || labels.len() != meta.n {
            return Err(Error::Malformed {
                path: meta_path,
                reason: format!(
                    "sidecar says n={}, d={} but files hold {}x{} features and {} labels",
                    meta.n,
                    meta.d,
                    features.rows(),
                    features.cols(),
                    labels.len()
                ),
            });
        }
        Self::new(features, labels, meta.k, meta.name)
    }
}

fn parse_labels(path: &Path, text: &str) -> Result<Vec<usize>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            l.trim().parse::<usize>().map_err(|e| Error::Malformed {
                path: path.to_path_buf(),
                reason: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}

/// JSON sidecar of a dataset on disk.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub name: String,
    pub n: usize,
    pub d: usize,
    #[serde(rename = "K")]
    pub k: usize,
}

/// Gaussian class-conditional generator.
///
/// Each class gets a random mean of norm `separation`; the shared noise is
/// axis-aligned with variances `spectrum_decay^j`, so small-variance feature
/// directions produce small eigenvalues in the gradient second-moment matrix.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct GaussianMixtureSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub dim: usize,
    pub classes: usize,
    pub separation: f64,
    pub spectrum_decay: f64,
    pub label_noise: f64,
}

impl Default for GaussianMixtureSpec {
    fn default() -> Self {
        Self {
            n_train: 1000,
            n_test: 64,
            dim: 50,
            classes: 2,
            separation: 2.0,
            spectrum_decay: 0.95,
            label_noise: 0.2,
        }
    }
}

impl GaussianMixtureSpec {
    /// Returns `(train, test)`; the test set shares the class means.
    pub fn generate(&self, seed: u64) -> Result<(Dataset, Dataset)> {
        if self.dim == 0 || self.n_train == 0 || self.n_test == 0 {
            return Err(Error::Domain("generator needs positive n-train, n-test and dim".into()));
        }
        if self.classes < 2 {
            return Err(Error::Domain(format!("generator needs at least 2 classes, got {}", self.classes)));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return Err(Error::Domain(format!("separation must be finite and >= 0, got {}", self.separation)));
        }
        if !(0.0..1.0).contains(&self.label_noise) {
            return Err(Error::Domain("label-noise must lie in [0, 1)".into()));
        }
        if !(self.spectrum_decay > 0.0 && self.spectrum_decay <= 1.0) {
            return Err(Error::Domain("spectrum-decay must lie in (0, 1]".into()));
        }
        let mut mean_rng = SeededRng::new(seed, 0);
        let means: Vec<Vec<f64>> = (0..self.classes)
            .map(|_| {
                let v: Vec<f64> = (0..self.dim).map(|_| mean_rng.normal()).collect();
                let nv = crate::tensor::norm2(&v).max(f64::MIN_POSITIVE);
                v.iter().map(|x| x * 0.5 * self.separation / nv).collect()
            })
            .collect();
        let sd: Vec<f64> = (0..self.dim)
            .map(|j| self.spectrum_decay.powi(j as i32).sqrt())
            .collect();
        let draw = |n: usize, stream: u64, name: &str| -> Result<Dataset> {
            let mut rng = SeededRng::new(seed, stream);
            let mut data = Vec::with_capacity(n * self.dim);
            let mut labels = Vec::with_capacity(n);
            for i in 0..n {
                let y = i % self.classes;
                for (j, s) in sd.iter().enumerate() {
                    data.push(means[y][j] + s * rng.normal());
                }
                let noisy = rng.uniform() < self.label_noise;
                let shift = 1 + rng.below(self.classes - 1);
                labels.push(if noisy { (y + shift) % self.classes } else { y });
            }
            Dataset::new(DenseMatrix::new(n, self.dim, data)?, labels, self.classes, name)
        };
        Ok((draw(self.n_train, 1, "train")?, draw(self.n_test, 2, "test")?))
    }
}
