//! Dense numerics for the graph transformer stack: a row-major [`Matrix`],
//! Jacobi eigen/SVD solvers and a matrix-level reverse-mode [`Tape`].

pub mod eig;
pub mod error;
pub mod matrix;
pub mod ops;
pub mod svd;
pub mod tape;

pub use eig::{canonical_sign, sym_eig, EigResult};
pub use error::{NumError, Result};
pub use matrix::Matrix;
pub use ops::{gelu, layer_norm, matmul, matmul_t, relu, row_softmax};
pub use svd::{svd, SvdResult};
pub use tape::{Gradients, NodeId, Tape};
