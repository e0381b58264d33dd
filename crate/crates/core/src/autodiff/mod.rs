//! Minimal reverse-mode automatic differentiation over dense matrices, with
//! the optimizer, seeded initialization, dropout masks and checkpoints used by
//! every learning component.

mod adam;
mod checkpoint;
pub mod gradcheck;
mod graph;
mod init;
mod params;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{
    apply_checkpoint, decode_checkpoint, encode_checkpoint, load_checkpoint, load_store,
    read_checkpoint, save_checkpoint, LoadMode, FORMAT_VERSION, MAGIC,
};
pub use graph::{Gradients, Graph, Var};
pub use init::{derive_seed, rng_from, uniform_init, DropoutMask, MaskStream};
pub use params::{l2_penalty, ParameterStore};
pub use tensor::{Real, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("row {row} has (near) zero norm")]
    ZeroNorm { row: usize },
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParameter(String),
    #[error("no gradient for trainable parameter `{0}`")]
    MissingGradient(String),
    #[error("{0}")]
    InvalidArgument(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
