//! End-to-end lookup: description text in, ranked words with per-channel
//! explanations out.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::channels::rank;
use crate::config::ChannelWeights;
use crate::evaluator::{apply_prior_filter, EvalError, PriorKnowledge, PRIOR_WINDOW};
use crate::lexicon::{tokenize, LexiconError};
use crate::model::Model;
use crate::tensor::TensorError;
use crate::trainer::Checkpoint;

pub const DEFAULT_TOP_K: usize = 10;
pub const MAX_TOP_K: usize = PRIOR_WINDOW;

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("description is empty after tokenization")]
    EmptyDescription,
    #[error("top_k must be between 1 and {MAX_TOP_K}, got {0}")]
    TopK(usize),
    #[error("initial_letter must be a single character, got {0:?}")]
    InitialLetter(String),
    #[error("unknown POS tag {0:?}")]
    UnknownPos(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl QueryError {
    /// True when the request, not the model, is at fault.
    pub fn is_client_error(&self) -> bool {
        !matches!(self, Self::Tensor(_))
    }
}

fn default_top_k() -> usize {
    DEFAULT_TOP_K
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRequest {
    pub description: String,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default)]
    pub pos: Option<String>,
    #[serde(default)]
    pub initial_letter: Option<String>,
    #[serde(default)]
    pub word_length: Option<usize>,
}

impl QueryRequest {
    pub fn new(description: impl Into<String>) -> Self {
        Self {
            description: description.into(),
            top_k: DEFAULT_TOP_K,
            pos: None,
            initial_letter: None,
            word_length: None,
        }
    }

    pub fn prior(&self) -> Result<PriorKnowledge, QueryError> {
        let initial_letter = match &self.initial_letter {
            None => None,
            Some(s) => {
                let mut chars = s.chars();
                match (chars.next(), chars.next()) {
                    (Some(c), None) => Some(c),
                    _ => return Err(QueryError::InitialLetter(s.clone())),
                }
            }
        };
        Ok(PriorKnowledge {
            pos: self.pos.clone(),
            initial_letter,
            word_length: self.word_length,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub word: String,
    pub score: f64,
    /// Weighted score of each enabled channel; these sum to `score`.
    pub contributions: BTreeMap<String, f64>,
    /// 0-based position in the (filtered) ranking.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub checkpoint: String,
    pub channels: ChannelWeights,
    pub enabled: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub results: Vec<QueryResult>,
    pub model: ModelInfo,
}

/// Short content hash identifying a checkpoint.
pub fn checkpoint_id(ckpt: &Checkpoint) -> String {
    let digest = Sha256::digest(ckpt.to_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// An immutable model plus the id of the checkpoint it came from.
#[derive(Debug, Clone)]
pub struct QueryEngine {
    model: Model,
    checkpoint: String,
}

impl QueryEngine {
    pub fn new(model: Model, checkpoint: impl Into<String>) -> Self {
        Self {
            model,
            checkpoint: checkpoint.into(),
        }
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn checkpoint(&self) -> &str {
        &self.checkpoint
    }

    pub fn info(&self) -> ModelInfo {
        ModelInfo {
            checkpoint: self.checkpoint.clone(),
            channels: self.model.config().channels.clone(),
            enabled: self.model.enabled_channels().iter().map(|c| c.name().to_string()).collect(),
        }
    }

    /// Tokenize, score, rank, filter by prior knowledge within the top
    /// [`PRIOR_WINDOW`], truncate to `top_k`.
    pub fn query(&self, request: &QueryRequest) -> Result<QueryResponse, QueryError> {
        if !(1..=MAX_TOP_K).contains(&request.top_k) {
            return Err(QueryError::TopK(request.top_k));
        }
        let prior = request.prior()?;
        let lex = self.model.lexicon();
        let tokens = tokenize(&request.description, &lex.vocab).map_err(|e| match e {
            LexiconError::EmptyQuery => QueryError::EmptyDescription,
            other => unreachable!("tokenize only fails on empty input: {other}"),
        })?;
        let scores = self.model.scores(&tokens)?;
        let mut ranked = rank(&scores.fused);
        if !prior.is_empty() {
            ranked.truncate(PRIOR_WINDOW);
            ranked = apply_prior_filter(&ranked, &prior, &lex.features, &lex.vocab).map_err(|e| match e {
                EvalError::UnknownPos(p) => QueryError::UnknownPos(p),
                other => unreachable!("prior filter only fails on POS lookup: {other}"),
            })?;
        }
        ranked.truncate(request.top_k);
        let results = ranked
            .into_iter()
            .enumerate()
            .map(|(rank, w)| QueryResult {
                word: lex.vocab.word(w).to_string(),
                score: scores.fused[w],
                contributions: scores
                    .contributions
                    .iter()
                    .map(|(c, v)| (c.name().to_string(), v[w]))
                    .collect(),
                rank,
            })
            .collect();
        Ok(QueryResponse {
            results,
            model: self.info(),
        })
    }
}
