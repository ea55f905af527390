use std::path::PathBuf;

/// Errors produced by the occupancy toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Inputs with the wrong shape, size or value range.
    #[error("invalid input: {0}")]
    Input(String),

    /// A least-squares problem without a unique solution.
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    /// A caller broke a documented precondition.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Malformed binary payload; `offset` is the byte where decoding stopped.
    #[error("format error at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn format(offset: u64, reason: impl Into<String>) -> Self {
        Error::Format {
            offset,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
