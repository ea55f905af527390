use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] occ4d_core::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("missing input {}", .0.display())]
    Missing(PathBuf),
    #[error("{0}")]
    Invalid(String),
    #[error("strict mode: {0}")]
    Strict(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad episode pattern: {0}")]
    Pattern(#[from] glob::PatternError),
}

impl CliError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
