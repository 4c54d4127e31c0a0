use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("cannot read {path}: {source}")]
    ReadConfig {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] attune_core::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// Process exit status: 2 config, 3 capability, 4 numerical, 1 anything else.
    pub fn exit_code(&self) -> u8 {
        use attune_core::Error as E;
        match self {
            CliError::Config(_) | CliError::ReadConfig { .. } => 2,
            CliError::Core(E::Domain(_) | E::Dimension(_)) => 2,
            CliError::Core(E::Capability(_)) => 3,
            CliError::Core(e) if e.is_numerical() => 4,
            _ => 1,
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}
