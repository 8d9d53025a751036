//! Graph values, dataset files and the structural matrices built from them.

pub mod error;
pub mod graph;
pub mod io;
pub mod sample;
pub mod structure;

pub use error::{GraphError, Result};
pub use graph::{EdgeSpec, Graph};
pub use io::{load_graph, parse_dataset, save_graph, write_dataset, Dataset, GraphFormat};
pub use sample::{shadow_khop_sample, Subgraph};
pub use structure::{
    degrees, graph_kernel, hop_mask, kernel_from_spectrum, normalized_laplacian,
    shortest_path_edges, spd_matrix, KernelKind, Spd, StructCache, RANDOM_WALK_GAMMA,
    UNREACHABLE,
};
