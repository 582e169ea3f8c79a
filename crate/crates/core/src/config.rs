//! Hyperparameters. The JSON form uses these field names directly.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dimension of the pretrained English embeddings.
pub const DEFAULT_EMBEDDING_DIM: usize = 300;
/// Directional hidden size; the concatenated state is twice this.
pub const DEFAULT_HIDDEN_DIM: usize = 300;
pub const DEFAULT_DROPOUT: f64 = 0.5;
pub const DEFAULT_LEARNING_RATE: f64 = 0.001;
pub const DEFAULT_BATCH_SIZE: usize = 128;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AttentionMode {
    /// `α_i = h_t · h_i`, unnormalized.
    #[default]
    Literal,
    /// `α = softmax(h_t · h_i)`.
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LossMode {
    /// Softmax cross-entropy over fused scores.
    #[default]
    Softmax,
    /// Per-word sigmoid binary cross-entropy, summed over the vocabulary.
    OneVsAllSigmoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Word embedding dimension `d`; must match the embedding file.
    pub input_dim: usize,
    /// Directional hidden dimension `l`.
    pub hidden_dim: usize,
    pub attention: AttentionMode,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            input_dim: DEFAULT_EMBEDDING_DIM,
            hidden_dim: DEFAULT_HIDDEN_DIM,
            attention: AttentionMode::Literal,
            dropout: DEFAULT_DROPOUT,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.input_dim == 0 || self.hidden_dim == 0 {
            return Err(ConfigError::Invalid("encoder dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ConfigError::Invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// The five scoring pathways.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Word,
    Pos,
    #[serde(rename = "mor")]
    Morpheme,
    #[serde(rename = "cat")]
    Category,
    #[serde(rename = "sem")]
    Sememe,
}

impl Channel {
    pub const ALL: [Channel; 5] = [
        Channel::Word,
        Channel::Pos,
        Channel::Morpheme,
        Channel::Category,
        Channel::Sememe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Channel::Word => "word",
            Channel::Pos => "pos",
            Channel::Morpheme => "mor",
            Channel::Category => "cat",
            Channel::Sememe => "sem",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelWeights {
    pub lambda_word: f64,
    pub lambda_pos: f64,
    pub lambda_mor: f64,
    pub lambda_cat: f64,
    pub lambda_sem: f64,
    /// Per category layer weight; missing layers default to 1.
    pub beta: Vec<f64>,
}

impl Default for ChannelWeights {
    fn default() -> Self {
        Self {
            lambda_word: 1.0,
            lambda_pos: 1.0,
            lambda_mor: 1.0,
            lambda_cat: 1.0,
            lambda_sem: 1.0,
            beta: Vec::new(),
        }
    }
}

impl ChannelWeights {
    /// Only the direct word channel: the plain BiLSTM baseline.
    pub fn word_only() -> Self {
        Self {
            lambda_word: 1.0,
            lambda_pos: 0.0,
            lambda_mor: 0.0,
            lambda_cat: 0.0,
            lambda_sem: 0.0,
            beta: Vec::new(),
        }
    }

    pub fn lambda(&self, channel: Channel) -> f64 {
        match channel {
            Channel::Word => self.lambda_word,
            Channel::Pos => self.lambda_pos,
            Channel::Morpheme => self.lambda_mor,
            Channel::Category => self.lambda_cat,
            Channel::Sememe => self.lambda_sem,
        }
    }

    pub fn beta(&self, layer: usize) -> f64 {
        self.beta.get(layer).copied().unwrap_or(1.0)
    }

    /// Multiplies every λ by `factor` (β untouched).
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            lambda_word: self.lambda_word * factor,
            lambda_pos: self.lambda_pos * factor,
            lambda_mor: self.lambda_mor * factor,
            lambda_cat: self.lambda_cat * factor,
            lambda_sem: self.lambda_sem * factor,
            beta: self.beta.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let lambdas = Channel::ALL.map(|c| self.lambda(c));
        if lambdas.iter().chain(&self.beta).any(|l| !l.is_finite() || *l < 0.0) {
            return Err(ConfigError::Invalid("channel weights must be finite and non-negative".into()));
        }
        if lambdas.iter().all(|&l| l == 0.0) {
            return Err(ConfigError::Invalid("at least one channel weight must be positive".into()));
        }
        Ok(())
    }
}

/// Lexicon and dataset files a run was trained on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub embeddings: PathBuf,
    pub features: PathBuf,
    pub train: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seen: Option<PathBuf>,
}

impl DataPaths {
    /// Joins relative paths onto `base`.
    pub fn resolve(&self, base: &std::path::Path) -> Self {
        let join = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };
        Self {
            embeddings: join(&self.embeddings),
            features: join(&self.features),
            train: join(&self.train),
            seen: self.seen.as_ref().map(join),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub loss: LossMode,
    /// Global gradient-norm clip; off unless set.
    pub clip_norm: Option<f64>,
    pub encoder: EncoderConfig,
    pub channels: ChannelWeights,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<DataPaths>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: DEFAULT_LEARNING_RATE,
            batch_size: DEFAULT_BATCH_SIZE,
            epochs: 20,
            seed: 0,
            loss: LossMode::Softmax,
            clip_norm: None,
            encoder: EncoderConfig::default(),
            channels: ChannelWeights::default(),
            data: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ConfigError::Invalid("learning_rate must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(ConfigError::Invalid("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(ConfigError::Invalid("batch_size must be at least 1".into()));
        }
        if let Some(c) = self.clip_norm {
            if c.is_nan() || c <= 0.0 {
                return Err(ConfigError::Invalid("clip_norm must be positive".into()));
            }
        }
        self.encoder.validate()?;
        self.channels.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!(c.learning_rate, 0.001);
        assert_eq!(c.batch_size, 128);
        assert_eq!(c.encoder.dropout, 0.5);
        assert_eq!(c.encoder.hidden_dim, 300);
        assert_eq!(c.encoder.input_dim, 300);
        assert_eq!(c.encoder.attention, AttentionMode::Literal);
        for ch in Channel::ALL {
            assert_eq!(c.channels.lambda(ch), 1.0);
        }
        assert_eq!(c.channels.beta(3), 1.0);
        c.validate().unwrap();
    }

    #[test]
    fn json_field_names() {
        let c: TrainConfig = serde_json::from_str(
            r#"{"epochs": 3, "loss": "one-vs-all-sigmoid",
                "encoder": {"input_dim": 16, "hidden_dim": 8, "attention": "softmax", "dropout": 0.0},
                "channels": {"lambda_pos": 0.0, "beta": [1.0, 0.5]}}"#,
        )
        .unwrap();
        assert_eq!(c.loss, LossMode::OneVsAllSigmoid);
        assert_eq!(c.encoder.attention, AttentionMode::Softmax);
        assert_eq!(c.channels.beta(1), 0.5);
        assert_eq!(c.batch_size, 128);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"epoch": 3}"#).is_err());
    }

    #[test]
    fn validation() {
        let mut c = TrainConfig::default();
        c.epochs = 0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.channels = ChannelWeights { lambda_word: 0.0, ..ChannelWeights::word_only() };
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.encoder.dropout = 1.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.learning_rate = 0.0;
        assert!(c.validate().is_err());
    }
}
