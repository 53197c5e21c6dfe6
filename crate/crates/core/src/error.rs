use std::path::PathBuf;

/// Errors raised anywhere in the training and prediction pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unsupported element: Z={0} (supported range is 1..=54)")]
    UnsupportedElement(u32),

    #[error("unknown element symbol '{0}'")]
    UnknownSymbol(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("missing reference data: {0}")]
    MissingReference(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("all training data excluded")]
    AllExcluded,

    #[error("{0}")]
    Mismatch(String),

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
