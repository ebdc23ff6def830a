use std::path::PathBuf;

/// Errors raised across the induction, model and harness layers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("format error in record {record}: {message}")]
    Format { record: usize, message: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("unsupported combination: {0}")]
    UnsupportedCombination(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("metric undefined: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
