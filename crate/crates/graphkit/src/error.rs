use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("cannot access {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("graph file is not valid JSON: {0}")]
    Syntax(#[from] serde_json::Error),
    #[error("graph {graph}: malformed record: {detail}")]
    Malformed { graph: usize, detail: String },
    #[error("graph {graph}: edge {edge} references node {node}, but the graph has {num_nodes} nodes")]
    UnknownNode { graph: usize, edge: usize, node: usize, num_nodes: usize },
    #[error("graph {graph}: undirected edge ({i}, {j}) is listed with conflicting features")]
    AsymmetricUndirected { graph: usize, i: usize, j: usize },
    #[error("operation requires an undirected graph")]
    DirectedUnsupported,
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error(transparent)]
    Numeric(#[from] numkit::NumError),
}

pub type Result<T> = std::result::Result<T, GraphError>;
