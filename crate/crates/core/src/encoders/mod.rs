//! Code and comment encoders plus skip-gram symbol embeddings.

mod code;
mod gru;
mod skipgram;
mod text;
mod vocab;

pub use code::{
    gcn_layer, retrieval_attention, CodeEncoder, CodeEncoderConfig, CodeInput, CodeOutput,
    CodeVars, CODE_PREFIX,
};
pub use gru::{bigru, bind_bigru, init_bigru, GruVars};
pub use skipgram::{skipgram_pretrain, SkipGramConfig};
pub use text::{TextEncoder, TextEncoderConfig, TextVars, TEXT_PREFIX};
pub use vocab::{tokenize_text, Vocab, PAD, PAD_ID, UNK, UNK_ID};

#[derive(Debug, thiserror::Error)]
pub enum EncoderError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Autodiff(#[from] crate::autodiff::AutodiffError),
    #[error(transparent)]
    Java(#[from] crate::java::JavaError),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
