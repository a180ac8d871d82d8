use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not agree.
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// An architecture or operator configuration that cannot be realised.
    #[error("configuration error: {0}")]
    Config(String),

    /// API misuse, e.g. backward on a foreign tensor or stepping without gradients.
    #[error("usage error: {0}")]
    Usage(String),

    /// Invalid user-provided values (labels out of range, unknown presets, ...).
    #[error("input error: {0}")]
    Input(String),

    /// Malformed dataset or checkpoint bytes.
    #[error("format error in {path} at byte offset {offset}: {detail}")]
    Format {
        path: PathBuf,
        offset: u64,
        detail: String,
    },

    #[error("missing file(s): {}", .expected.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    MissingFiles { expected: Vec<PathBuf> },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// A forward pass produced a non-finite loss during training.
    #[error("non-finite loss {value} at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize, value: f64 },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
