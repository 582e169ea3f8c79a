//! Multi-channel reverse dictionary: given a description, rank every word in
//! the vocabulary by how well it fits.
//!
//! A bidirectional LSTM with attention encodes the description. Five channels
//! score each word from the encoding: direct word prediction, part of speech,
//! morphemes, hierarchical categories and sememes. Their weighted sum ranks
//! the vocabulary. Everything, including gradients, is computed by the small
//! reverse-mode engine in [`autodiff`].

pub mod autodiff;
pub mod channels;
pub mod config;
pub mod encoder;
pub mod evaluator;
pub mod lexicon;
pub mod model;
pub mod params;
pub mod query;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use config::{AttentionMode, Channel, ChannelWeights, DataPaths, EncoderConfig, LossMode, TrainConfig};
pub use evaluator::{evaluate, EvalReport, PriorKind, PriorKnowledge};
pub use lexicon::{DefinitionDataset, Split, Vocabulary, WordFeatureTable};
pub use model::{ChannelScores, Lexicon, Model, ModelConfig};
pub use query::{QueryEngine, QueryError, QueryRequest, QueryResponse};
pub use tensor::{Tensor, TensorError};
pub use trainer::{load_checkpoint, save_checkpoint, Checkpoint, EpochLog, Trainer};
