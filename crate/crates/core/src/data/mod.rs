//! Review corpus: record format, statistics, method-pair extraction,
//! splitting and batching.

mod corpus;
mod pairs;
mod split;

pub use corpus::{
    corpus_stats, load_corpus, parse_corpus, save_corpus, stats_by_repo, write_corpus, CorpusStats,
    Fragment, KeyPolicy, ReviewSample,
};
pub use pairs::{extract_method_pairs, MethodPair};
pub use split::{batch_indices, batches, split, SplitSpec};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error("corpus is empty")]
    Empty,
    #[error("{0}")]
    Spec(String),
    #[error(transparent)]
    Java(#[from] crate::java::JavaError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
