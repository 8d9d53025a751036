use std::path::PathBuf;

use graphtx::ModelError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    /// Invalid configuration; `field` is a dotted path such as `train.batch_size`.
    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("metric `{metric}` is undefined: {reason}")]
    UndefinedMetric { metric: &'static str, reason: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("cannot access {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed file {}: {message}", path.display())]
    Format { path: PathBuf, message: String },
}

impl BenchError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        BenchError::Config { field: field.into(), message: message.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        BenchError::Io { path: path.into(), source }
    }

    /// Process exit code: 2 for configuration problems, 3 for numeric
    /// failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config { .. } | BenchError::Format { .. } => 2,
            BenchError::Numeric(_) | BenchError::UndefinedMetric { .. } | BenchError::Shape(_) => 3,
            BenchError::Io { .. } => 1,
        }
    }
}

impl From<ModelError> for BenchError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(m) => BenchError::config("model", m),
            ModelError::Unsupported { variant, reason } => {
                BenchError::config("variant", format!("`{variant}` cannot run: {reason}"))
            }
            ModelError::Graph(g) => g.into(),
            ModelError::Shape(m) => BenchError::Shape(m),
            ModelError::Numeric(n) => BenchError::Numeric(n.to_string()),
        }
    }
}

impl From<numkit::NumError> for BenchError {
    fn from(e: numkit::NumError) -> Self {
        BenchError::Numeric(e.to_string())
    }
}

impl From<graphkit::GraphError> for BenchError {
    fn from(e: graphkit::GraphError) -> Self {
        use graphkit::GraphError as G;
        match e {
            G::Io { path, source } => BenchError::Io { path, source },
            G::Numeric(n) => BenchError::Numeric(n.to_string()),
            G::DirectedUnsupported => BenchError::config("variant", e.to_string()),
            other => BenchError::Format { path: PathBuf::from("<graph input>"), message: other.to_string() },
        }
    }
}

pub type Result<T> = std::result::Result<T, BenchError>;
