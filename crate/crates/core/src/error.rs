use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid category set: {0}")]
    Categories(String),

    #[error("category set mismatch: {0}")]
    CategoryMismatch(String),

    #[error("unknown category `{0}`")]
    UnknownCategory(String),

    #[error("invalid image: {0}")]
    Image(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("manifest invariant violated: {0}")]
    Manifest(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("empty label set: {0}")]
    EmptyLabels(String),

    #[error("unknown {kind} `{name}` (registered: {known})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        known: String,
    },

    #[error("backend `{backend}` failed: {message}")]
    Backend { backend: String, message: String },

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("model is not trained")]
    Untrained,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{0}")]
    Harness(String),

    #[error("stage `{stage}` failed")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot read or write png {}", path.display())]
    Png {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether this error comes from bad input or configuration rather than
    /// a failure while running a stage.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Stage { .. } => false,
            Error::Config(_) | Error::UnknownStrategy { .. } | Error::Categories(_) => true,
            _ => false,
        }
    }
}
