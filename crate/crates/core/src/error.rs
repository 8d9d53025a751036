use graphkit::GraphError;
use numkit::NumError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Numeric(#[from] NumError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("variant `{variant}` cannot run on this graph: {reason}")]
    Unsupported { variant: String, reason: String },
}

pub type Result<T> = std::result::Result<T, ModelError>;
