use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::io::{read_matrix, write_atomic, write_matrix};
use crate::tensor::DenseMatrix;

/// Scores `τ(z′_t, z_i)` for every test point `t` (rows) and training point `i` (columns).
#[derive(Clone, Debug, PartialEq)]
pub struct AttributionMatrix {
    pub scores: DenseMatrix,
    pub attributor: String,
    pub hyperparams: BTreeMap<String, serde_json::Value>,
    pub checkpoint_hash: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
struct Sidecar {
    attributor_id: String,
    hyperparams: BTreeMap<String, serde_json::Value>,
    checkpoint_hash: Option<String>,
    rows: usize,
    cols: usize,
}

impl AttributionMatrix {
    pub fn new(scores: DenseMatrix, attributor: impl Into<String>) -> Result<Self> {
        if !scores.all_finite() {
            return Err(Error::Conditioning("attribution scores are not finite".into()));
        }
        Ok(Self {
            scores,
            attributor: attributor.into(),
            hyperparams: BTreeMap::new(),
            checkpoint_hash: None,
        })
    }

    pub fn with_param(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.hyperparams.insert(key.to_string(), value.into());
        self
    }

    pub fn with_checkpoint(mut self, hash: impl Into<String>) -> Self {
        self.checkpoint_hash = Some(hash.into());
        self
    }

    pub fn n_test(&self) -> usize {
        self.scores.rows()
    }

    pub fn n_train(&self) -> usize {
        self.scores.cols()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        self.scores.row(t)
    }

    /// Writes `<stem>.atrm` and `<stem>.json` under `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        write_matrix(&dir.join(format!("{stem}.atrm")), &self.scores)?;
        let side = Sidecar {
            attributor_id: self.attributor.clone(),
            hyperparams: self.hyperparams.clone(),
            checkpoint_hash: self.checkpoint_hash.clone(),
            rows: self.scores.rows(),
            cols: self.scores.cols(),
        };
        write_atomic(
            &dir.join(format!("{stem}.json")),
            serde_json::to_string_pretty(&side)?.as_bytes(),
        )
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let side_path = dir.join(format!("{stem}.json"));
        let side: Sidecar = serde_json::from_slice(&fs::read(&side_path)?)?;
        let scores = read_matrix(&dir.join(format!("{stem}.atrm")))?;
        if scores.shape() != (side.rows, side.cols) {
            return Err(Error::Malformed {
                path: side_path,
                reason: format!(
                    "sidecar says {}x{}, matrix is {}x{}",
                    side.rows,
                    side.cols,
                    scores.rows(),
                    scores.cols()
                ),
            });
        }
        Ok(Self {
            scores,
            attributor: side.attributor_id,
            hyperparams: side.hyperparams,
            checkpoint_hash: side.checkpoint_hash,
        })
    }
}
