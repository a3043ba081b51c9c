//! Dense `f64` matrices with tape-based reverse-mode differentiation, the
//! graph attention and cross-attention layers, and Adam.

mod layers;
mod matrix;
mod params;
mod tape;

use thiserror::Error;

pub use layers::{attend, cross_attention, gat, gat_layer, phi, AttentionWeights, CrossAttention, EdgeIndex, Linear, Mlp};
pub use matrix::Matrix;
pub use params::{AdamConfig, Gradients, ParamEntry, ParamId, ParamStore};
pub use tape::{Tape, Var, LAYER_NORM_EPS};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: String, detail: String },
    #[error("backward already ran on this tape")]
    BackwardTwice,
    #[error("no gradients recorded since the last optimizer step")]
    MissingGradients,
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("duplicate parameter {0}")]
    DuplicateParam(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
