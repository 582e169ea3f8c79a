//! The assembled reverse dictionary: lexicon, parameters and the forward pass
//! from query tokens to fused per-word scores.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Graph, LstmCell, NodeId};
use crate::channels::{self, FeatureIncidence, Fused};
use crate::config::{Channel, ChannelWeights, ConfigError, DataPaths, EncoderConfig};
use crate::encoder::{encode_tokens, EncoderNodes, EncoderState};
use crate::lexicon::{
    load_embeddings, load_feature_table, EmbeddingMatrix, LexiconError, Vocabulary, WordFeatureTable,
};
use crate::params::{self, ModelDims, ModelParams};
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error("parameter {0:?} missing")]
    MissingParam(String),
    #[error("unexpected parameter {0:?}")]
    UnexpectedParam(String),
    #[error("parameter {name:?} has shape {found:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("embedding dimension {found} does not match encoder input_dim {expected}")]
    EmbeddingDim { expected: usize, found: usize },
    #[error("feature table covers {table} words but vocabulary has {vocab}")]
    TableSize { table: usize, vocab: usize },
}

/// Vocabulary, fixed embeddings and feature table, with content hashes used
/// to pair checkpoints with the data they were trained on.
#[derive(Debug, Clone)]
pub struct Lexicon {
    pub vocab: Vocabulary,
    pub embeddings: EmbeddingMatrix,
    pub features: WordFeatureTable,
    vocab_hash: String,
    feature_hash: String,
}

impl Lexicon {
    pub fn new(vocab: Vocabulary, embeddings: EmbeddingMatrix, features: WordFeatureTable) -> Result<Self, ModelError> {
        if features.len() != vocab.len() {
            return Err(ModelError::TableSize {
                table: features.len(),
                vocab: vocab.len(),
            });
        }
        assert_eq!(embeddings.rows(), vocab.len(), "embedding rows must match vocabulary");
        let vocab_hash = crate::lexicon::lexicon_hash(&vocab, &embeddings);
        let feature_hash = features.content_hash(&vocab);
        Ok(Self {
            vocab,
            embeddings,
            features,
            vocab_hash,
            feature_hash,
        })
    }

    pub fn load(paths: &DataPaths) -> Result<Self, ModelError> {
        let (vocab, embeddings) = load_embeddings(&paths.embeddings)?;
        let features = load_feature_table(&paths.features, &vocab)?;
        Self::new(vocab, embeddings, features)
    }

    /// Hash of the words and embedding values.
    pub fn vocab_hash(&self) -> &str {
        &self.vocab_hash
    }

    pub fn feature_hash(&self) -> &str {
        &self.feature_hash
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub channels: ChannelWeights,
}

/// Parameter handles bound into one graph.
#[derive(Debug, Clone)]
pub struct ModelNodes {
    pub encoder: EncoderNodes,
    pub word: (NodeId, NodeId),
    pub pos: Option<(NodeId, NodeId)>,
    pub morpheme: Option<(NodeId, NodeId)>,
    pub category: Vec<(NodeId, NodeId)>,
    pub sememe: Option<(NodeId, NodeId)>,
    pub embeddings: NodeId,
    /// Every bound parameter, in name order.
    pub params: Vec<(String, NodeId)>,
}

/// Graph handles for one scored query.
#[derive(Debug, Clone)]
pub struct QueryNodes {
    pub encoder: EncoderState,
    pub v_word: NodeId,
    pub sc_word: NodeId,
    pub sc_pos: Option<NodeId>,
    pub sc_mor: Option<NodeId>,
    pub sc_cat: Vec<NodeId>,
    pub sc_sem: Option<NodeId>,
    /// Unweighted per-word confidence of each computed channel.
    pub per_word: Vec<(Channel, NodeId)>,
    pub fused: Fused,
}

/// Concrete scores for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelScores {
    pub sc_word: Vec<f64>,
    pub sc_pos: Option<Vec<f64>>,
    pub sc_mor: Option<Vec<f64>>,
    pub sc_cat: Vec<Vec<f64>>,
    pub sc_sem: Option<Vec<f64>>,
    /// `sc_{w,c}` for every computed channel.
    pub per_word: BTreeMap<Channel, Vec<f64>>,
    /// `λ_c · sc_{w,c}` for every channel that entered the fusion.
    pub contributions: BTreeMap<Channel, Vec<f64>>,
    pub fused: Vec<f64>,
}

impl QueryNodes {
    pub fn values(&self, g: &Graph) -> ChannelScores {
        let val = |id: NodeId| g.value(id).data().to_vec();
        ChannelScores {
            sc_word: val(self.sc_word),
            sc_pos: self.sc_pos.map(val),
            sc_mor: self.sc_mor.map(val),
            sc_cat: self.sc_cat.iter().map(|&id| val(id)).collect(),
            sc_sem: self.sc_sem.map(val),
            per_word: self.per_word.iter().map(|&(c, id)| (c, val(id))).collect(),
            contributions: self.fused.contributions.iter().map(|&(c, id)| (c, val(id))).collect(),
            fused: val(self.fused.fused),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    params: ModelParams,
    lexicon: Arc<Lexicon>,
    incidence: FeatureIncidence,
}

impl Model {
    /// Parameter sizes for a lexicon. Characteristic channels with an empty
    /// registry or a zero weight get no parameters.
    pub fn dims(lexicon: &Lexicon, config: &ModelConfig) -> ModelDims {
        let reg = lexicon.features.registry();
        let w = &config.channels;
        let on = |c: Channel, n: usize| if w.lambda(c) > 0.0 { n } else { 0 };
        ModelDims {
            input_dim: config.encoder.input_dim,
            hidden_dim: config.encoder.hidden_dim,
            pos: on(Channel::Pos, reg.pos.len()),
            morphemes: on(Channel::Morpheme, reg.morphemes.len()),
            sememes: on(Channel::Sememe, reg.sememes.len()),
            category_layers: if w.lambda(Channel::Category) > 0.0 {
                reg.category_layers.clone()
            } else {
                Vec::new()
            },
        }
    }

    pub fn init<R: Rng + ?Sized>(lexicon: Arc<Lexicon>, config: ModelConfig, rng: &mut R) -> Result<Self, ModelError> {
        let params = ModelParams::init(&Self::dims(&lexicon, &config), rng);
        Self::new(lexicon, config, params)
    }

    pub fn new(lexicon: Arc<Lexicon>, config: ModelConfig, params: ModelParams) -> Result<Self, ModelError> {
        config.encoder.validate()?;
        config.channels.validate()?;
        if lexicon.embeddings.dim() != config.encoder.input_dim {
            return Err(ModelError::EmbeddingDim {
                expected: config.encoder.input_dim,
                found: lexicon.embeddings.dim(),
            });
        }
        let expected = Self::dims(&lexicon, &config).shapes();
        for (name, shape) in &expected {
            let t = params.get(name).ok_or_else(|| ModelError::MissingParam(name.clone()))?;
            if t.shape() != shape.as_slice() {
                return Err(ModelError::ParamShape {
                    name: name.clone(),
                    expected: shape.clone(),
                    found: t.shape().to_vec(),
                });
            }
        }
        if let Some((name, _)) = params.iter().find(|(n, _)| !expected.iter().any(|(e, _)| e == *n)) {
            return Err(ModelError::UnexpectedParam(name.clone()));
        }
        let incidence = FeatureIncidence::build(&lexicon.features, &config.channels);
        Ok(Self {
            config,
            params,
            lexicon,
            incidence,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    pub fn lexicon(&self) -> &Arc<Lexicon> {
        &self.lexicon
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.lexicon.vocab
    }

    /// Channels that are computed and fused, in fixed order.
    pub fn enabled_channels(&self) -> Vec<Channel> {
        let mut out = Vec::new();
        if self.config.channels.lambda_word > 0.0 {
            out.push(Channel::Word);
        }
        for c in [Channel::Pos, Channel::Morpheme, Channel::Category, Channel::Sememe] {
            if self.config.channels.lambda(c) > 0.0 && self.incidence.get(c).is_some() {
                out.push(c);
            }
        }
        out
    }

    /// Registers every parameter (trainable) and the embeddings (constant).
    pub fn register(&self, g: &mut Graph) -> ModelNodes {
        let ids: HashMap<String, NodeId> = self
            .params
            .iter()
            .map(|(name, t)| (name.clone(), g.param(name.clone(), t.clone())))
            .collect();
        self.bind(g, &ids)
    }

    /// Builds handles from parameter nodes that already exist in `g`.
    pub fn bind(&self, g: &mut Graph, ids: &HashMap<String, NodeId>) -> ModelNodes {
        let id = |name: &str| *ids.get(name).unwrap_or_else(|| panic!("parameter {name} not bound"));
        let pair = |w: &str, b: &str| (id(w), id(b));
        let opt = |w: &str, b: &str| ids.contains_key(w).then(|| pair(w, b));
        let l = self.config.encoder.hidden_dim;
        let embeddings = g.constant(self.lexicon.embeddings.matrix().clone());
        let mut bound: Vec<(String, NodeId)> = ids.iter().map(|(n, &i)| (n.clone(), i)).collect();
        bound.sort();
        ModelNodes {
            encoder: EncoderNodes {
                forward: LstmCell {
                    weight: id(params::LSTM_FWD_WEIGHT),
                    bias: id(params::LSTM_FWD_BIAS),
                    hidden: l,
                },
                backward: LstmCell {
                    weight: id(params::LSTM_BWD_WEIGHT),
                    bias: id(params::LSTM_BWD_BIAS),
                    hidden: l,
                },
            },
            word: pair(params::WORD_WEIGHT, params::WORD_BIAS),
            pos: opt(params::POS_WEIGHT, params::POS_BIAS),
            morpheme: opt(params::MOR_WEIGHT, params::MOR_BIAS),
            category: (0..)
                .map_while(|k| opt(&params::cat_weight(k), &params::cat_bias(k)))
                .collect(),
            sememe: opt(params::SEM_WEIGHT, params::SEM_BIAS),
            embeddings,
            params: bound,
        }
    }

    /// Scores one query inside `g`. `dropout` carries the training RNG.
    pub fn forward(
        &self,
        g: &mut Graph,
        nodes: &ModelNodes,
        tokens: &[usize],
        dropout: Option<&mut dyn RngCore>,
    ) -> Result<QueryNodes, TensorError> {
        let enc = encode_tokens(g, &nodes.encoder, &self.lexicon.embeddings, tokens, &self.config.encoder, dropout)?;
        let (w, b) = nodes.word;
        let (v_word, sc_word) = channels::score_word(g, enc.v, w, b, nodes.embeddings)?;
        let mut per_word = vec![(Channel::Word, sc_word)];
        let mask = vec![true; enc.h.len()];

        let mut sc_pos = None;
        if let (Some((w, b)), Some(inc)) = (nodes.pos, &self.incidence.pos) {
            let (logits, pw) = channels::score_pos(g, enc.v, w, b, inc)?;
            sc_pos = Some(logits);
            per_word.push((Channel::Pos, pw));
        }
        let mut sc_mor = None;
        if let (Some((w, b)), Some(inc)) = (nodes.morpheme, &self.incidence.morpheme) {
            let (global, pw) = channels::score_morpheme(g, &enc.h, &mask, w, b, inc)?;
            sc_mor = Some(global);
            per_word.push((Channel::Morpheme, pw));
        }
        let mut sc_cat = Vec::new();
        if let (false, Some(inc)) = (nodes.category.is_empty(), &self.incidence.category) {
            let (layers, pw) = channels::score_category(g, enc.v, &nodes.category, inc)?;
            sc_cat = layers;
            per_word.push((Channel::Category, pw));
        }
        let mut sc_sem = None;
        if let (Some((w, b)), Some(inc)) = (nodes.sememe, &self.incidence.sememe) {
            let (global, pw) = channels::score_sememe(g, &enc.h, &mask, w, b, inc)?;
            sc_sem = Some(global);
            per_word.push((Channel::Sememe, pw));
        }
        let fused = channels::fuse(g, &per_word, &self.config.channels)?;
        Ok(QueryNodes {
            encoder: enc,
            v_word,
            sc_word,
            sc_pos,
            sc_mor,
            sc_cat,
            sc_sem,
            per_word,
            fused,
        })
    }

    /// Dropout-free scores for one query.
    pub fn scores(&self, tokens: &[usize]) -> Result<ChannelScores, TensorError> {
        let mut g = Graph::new();
        let nodes = self.register(&mut g);
        let q = self.forward(&mut g, &nodes, tokens, None)?;
        Ok(q.values(&g))
    }
}
