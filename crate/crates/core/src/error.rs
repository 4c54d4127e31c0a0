use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the attribution toolkit.
///
/// Variants are grouped so a front end can map them onto exit codes:
/// configuration-style problems, capability limits, and numerical failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("capability limit: {0}")]
    Capability(String),

    #[error("ill-conditioned problem: {0}")]
    Conditioning(String),

    #[error("iteration diverged: {0}")]
    Divergence(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    Training { epoch: usize, reason: String },

    #[error("subset retrain {subset} failed: {source}")]
    Retrain {
        subset: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("coverage error: index {index} never appears in any subset")]
    Coverage { index: usize },

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("bad magic in {what}: expected {expected:?}, found {found:?}")]
    BadMagic {
        what: &'static str,
        expected: [u8; 4],
        found: [u8; 4],
    },

    #[error("unsupported {what} version {found} (expected {expected})")]
    Version {
        what: &'static str,
        expected: u32,
        found: u32,
    },

    #[error("payload length mismatch in {what}: expected {expected} bytes, found {found}")]
    Length {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("malformed file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error("cache entry {key} is corrupt")]
    CacheCorrupt { key: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by floating-point behaviour rather than bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Conditioning(_)
            | Error::Divergence(_)
            | Error::Training { .. }
            | Error::Degenerate(_)
            | Error::UndefinedCorrelation(_) => true,
            Error::Retrain { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
