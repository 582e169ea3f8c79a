//! Vocabulary, fixed embeddings, per-word feature tables and definition
//! datasets, plus query tokenization and batching.

mod batch;
mod dataset;
mod features;
mod vocab;

use std::path::PathBuf;

use thiserror::Error;

pub use batch::{make_batches, make_batches_with, QueryBatch};
pub use dataset::{load_dataset, parse_dataset, tokenize, DefinitionDataset, Entry, Split};
pub use features::{
    load_feature_table, parse_feature_table, FeatureRegistry, WordFeatureTable, WordFeatures,
};
pub(crate) use vocab::lexicon_hash;
pub use vocab::{load_embeddings, parse_embeddings, write_embeddings, EmbeddingMatrix, Vocabulary};

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("word {word:?}: {feature} index {index} outside registry of size {size}")]
    FeatureIndex {
        word: String,
        feature: &'static str,
        index: usize,
        size: usize,
    },
    #[error("invalid feature registry: {0}")]
    Registry(String),
    #[error("query is empty after tokenization")]
    EmptyQuery,
    #[error("duplicate word {0:?} in vocabulary")]
    DuplicateWord(String),
}

impl LexiconError {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Self::Parse {
            line,
            message: message.into(),
        }
    }
}

pub(crate) fn read_file(path: &std::path::Path) -> Result<String, LexiconError> {
    std::fs::read_to_string(path).map_err(|source| LexiconError::Io {
        path: path.to_path_buf(),
        source,
    })
}
