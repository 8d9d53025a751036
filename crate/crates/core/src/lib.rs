//! Graph Transformer layers with three families of graph injection:
//! auxiliary GNNs ([`ga`]), positional encodings ([`pe`]) and attention
//! modifications ([`at`]), built on the encoder blocks in [`txcore`].

pub mod at;
pub mod diagnostics;
pub mod error;
pub mod ga;
pub mod model;
pub mod params;
pub mod pe;
pub mod txcore;
pub mod variant;

pub use error::{ModelError, Result};
pub use model::{GraphTransformer, ModelSpec, PreparedGraph, ReadoutKind, VariantOptions};
pub use params::{Bound, ParamId, ParamStore};
pub use txcore::{Activation, AttnModifier, Dropout, ForwardCtx, LayerParams, ModelConfig, Readout, SizeTag};
pub use variant::Variant;
