use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A configuration value violates its documented range or shape.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A required configuration key is absent. Carries the full key path.
    #[error("missing required key `{0}`")]
    MissingKey(String),

    /// Two arrays that must agree in shape do not.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A numeric input that must be finite is not.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// A forward cache was used with a batch it was not computed from.
    #[error("stale forward cache: {0}")]
    StaleCache(String),

    /// Training produced a non-finite loss or gradient.
    #[error("numerical divergence: {0}")]
    Divergence(String),

    /// A persisted file does not follow its declared format.
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }

    /// Process exit code for this error: 2 for configuration and format
    /// problems, 3 for numerical divergence, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::MissingKey(_)
            | Error::Dimension(_)
            | Error::Format { .. }
            | Error::Csv(_)
            | Error::Json(_) => 2,
            Error::Divergence(_) | Error::NonFinite(_) => 3,
            Error::StaleCache(_) | Error::Io { .. } => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
