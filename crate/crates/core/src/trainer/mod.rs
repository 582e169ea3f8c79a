//! Loss, Adam, the epoch loop and checkpoints.

mod adam;
mod checkpoint;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, info};

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};
pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, RngState, FORMAT_VERSION, MAGIC,
};

use crate::autodiff::{Graph, NodeId};
use crate::config::{ConfigError, LossMode, TrainConfig};
use crate::evaluator::{evaluate, EvalError};
use crate::lexicon::{make_batches_with, DefinitionDataset, QueryBatch, Split};
use crate::model::{Lexicon, Model, ModelConfig, ModelError, ModelNodes};
use crate::tensor::{Tensor, TensorError};

/// Training-split entries scored per epoch when no seen split is supplied.
pub const MONITOR_SAMPLE: usize = 500;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite gradient in {param} at component {component}")]
    NonFiniteGradient { param: String, component: usize },
    #[error("gradient for unknown or mis-shaped parameter {0:?}")]
    UnknownGradient(String),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("training diverged in epoch {epoch}: {reason}; checkpoint from the start of the epoch kept")]
    Diverged {
        epoch: usize,
        reason: String,
        checkpoint: Box<Checkpoint>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// One line of the JSON-lines training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub acc1: f64,
    pub acc10: f64,
    pub seconds: f64,
}

/// Mean loss of `batch` over the fused scores.
pub fn batch_loss(
    g: &mut Graph,
    model: &Model,
    nodes: &ModelNodes,
    batch: &QueryBatch,
    mode: LossMode,
    mut dropout: Option<&mut dyn RngCore>,
) -> Result<NodeId, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let mut losses = Vec::with_capacity(batch.len());
    for i in 0..batch.len() {
        let rng = dropout.as_mut().map(|r| &mut **r as &mut dyn RngCore);
        let q = model.forward(g, nodes, batch.row(i), rng)?;
        let logits = q.fused.fused;
        let target = batch.targets[i];
        losses.push(match mode {
            LossMode::Softmax => g.softmax_cross_entropy(logits, target)?,
            LossMode::OneVsAllSigmoid => g.sigmoid_bce(logits, target)?,
        });
    }
    let total = g.sum(&losses)?;
    Ok(g.scale(total, 1.0 / batch.len() as f64))
}

/// Loss value and gradients keyed by parameter name for one batch.
pub fn batch_gradients(
    model: &Model,
    batch: &QueryBatch,
    mode: LossMode,
    dropout: Option<&mut dyn RngCore>,
) -> Result<(f64, BTreeMap<String, Tensor>), TrainError> {
    let mut g = Graph::new();
    let nodes = model.register(&mut g);
    let loss = batch_loss(&mut g, model, &nodes, batch, mode, dropout)?;
    let value = g.value(loss).item();
    let grads = g.backward(loss)?;
    let named = nodes
        .params
        .iter()
        .map(|(name, id)| (name.clone(), grads.get_or_zero(*id)))
        .collect();
    Ok((value, named))
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) -> f64 {
    let norm = grads
        .values()
        .flat_map(|t| t.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for t in grads.values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

fn rng_state(rng: &ChaCha8Rng) -> RngState {
    RngState {
        seed: rng.get_seed(),
        stream: rng.get_stream(),
        word_pos: rng.get_word_pos().to_string(),
    }
}

fn restore_rng(state: &RngState) -> Result<ChaCha8Rng, CheckpointError> {
    let pos: u128 = state
        .word_pos
        .parse()
        .map_err(|_| CheckpointError::Malformed(format!("rng position {:?}", state.word_pos)))?;
    let mut rng = ChaCha8Rng::from_seed(state.seed);
    rng.set_stream(state.stream);
    rng.set_word_pos(pos);
    Ok(rng)
}

/// Stateful training run. One ChaCha8 stream seeded from the config drives
/// initialization, shuffling and dropout, in that order.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    model: Model,
    adam: AdamState,
    rng: ChaCha8Rng,
    epoch: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig, lexicon: Arc<Lexicon>) -> Result<Self, TrainError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model_config = ModelConfig {
            encoder: config.encoder.clone(),
            channels: config.channels.clone(),
        };
        let model = Model::init(lexicon, model_config, &mut rng)?;
        let adam = AdamState::new(model.params());
        Ok(Self {
            config,
            model,
            adam,
            rng,
            epoch: 0,
        })
    }

    /// Resumes from `ckpt`, refusing a lexicon that differs from the one it
    /// was trained on.
    pub fn from_checkpoint(ckpt: Checkpoint, lexicon: Arc<Lexicon>) -> Result<Self, TrainError> {
        ckpt.verify(&lexicon)?;
        ckpt.config.validate()?;
        let rng = restore_rng(&ckpt.rng)?;
        let model_config = ModelConfig {
            encoder: ckpt.config.encoder.clone(),
            channels: ckpt.config.channels.clone(),
        };
        let model = Model::new(lexicon, model_config, ckpt.params)?;
        Ok(Self {
            config: ckpt.config,
            model,
            adam: ckpt.adam,
            rng,
            epoch: ckpt.epoch,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let lex = self.model.lexicon();
        Checkpoint {
            config: self.config.clone(),
            params: self.model.params().clone(),
            adam: self.adam.clone(),
            vocab_hash: lex.vocab_hash().to_string(),
            feature_hash: lex.feature_hash().to_string(),
            epoch: self.epoch,
            rng: rng_state(&self.rng),
        }
    }

    /// One pass over `train`. Accuracy is measured on `seen` when given,
    /// otherwise on the first [`MONITOR_SAMPLE`] training entries.
    pub fn run_epoch(
        &mut self,
        train: &DefinitionDataset,
        seen: Option<&DefinitionDataset>,
    ) -> Result<EpochLog, TrainError> {
        if train.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let start = Instant::now();
        let snapshot = self.checkpoint();
        let epoch = self.epoch + 1;
        let diverged = |reason: String| TrainError::Diverged {
            epoch,
            reason,
            checkpoint: Box::new(snapshot.clone()),
        };

        let pad = self.model.vocab().unk();
        let batches = make_batches_with(train, self.config.batch_size, pad, &mut self.rng);
        let training = self.config.encoder.dropout > 0.0;
        let mut weighted = 0.0;
        for (b, batch) in batches.iter().enumerate() {
            let rng = training.then_some(&mut self.rng as &mut dyn RngCore);
            let (loss, mut grads) = batch_gradients(&self.model, batch, self.config.loss, rng)?;
            if !loss.is_finite() {
                return Err(diverged(format!("loss {loss} in batch {b}")));
            }
            if let Some(max) = self.config.clip_norm {
                let norm = clip_global_norm(&mut grads, max);
                debug!(batch = b, norm, "gradient norm");
            }
            match adam_step(self.model.params_mut(), &grads, &mut self.adam, self.config.learning_rate) {
                Ok(()) => {}
                Err(e @ TrainError::NonFiniteGradient { .. }) => {
                    return Err(diverged(format!("{e} in batch {b}")));
                }
                Err(e) => return Err(e),
            }
            weighted += loss * batch.len() as f64;
        }
        let loss = weighted / train.len() as f64;

        let sample;
        let monitor = match seen {
            Some(s) if !s.is_empty() => s,
            _ => {
                let n = train.len().min(MONITOR_SAMPLE);
                sample = DefinitionDataset::new(Split::Train, train.entries[..n].to_vec());
                &sample
            }
        };
        let report = evaluate(&self.model, monitor, None)?;
        self.epoch = epoch;
        let log = EpochLog {
            epoch,
            loss,
            acc1: report.acc1,
            acc10: report.acc10,
            seconds: start.elapsed().as_secs_f64(),
        };
        info!(epoch, loss, acc1 = log.acc1, acc10 = log.acc10, "epoch done");
        Ok(log)
    }

    /// Runs the remaining epochs of the configured budget.
    pub fn train(
        &mut self,
        train: &DefinitionDataset,
        seen: Option<&DefinitionDataset>,
        mut on_epoch: impl FnMut(&EpochLog),
    ) -> Result<Vec<EpochLog>, TrainError> {
        if train.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let mut logs = Vec::new();
        while self.epoch < self.config.epochs {
            let log = self.run_epoch(train, seen)?;
            on_epoch(&log);
            logs.push(log);
        }
        Ok(logs)
    }
}

/// Trains from scratch and returns the final checkpoint with its log.
pub fn train(
    config: TrainConfig,
    lexicon: Arc<Lexicon>,
    dataset: &DefinitionDataset,
    seen: Option<&DefinitionDataset>,
) -> Result<(Checkpoint, Vec<EpochLog>), TrainError> {
    let mut trainer = Trainer::new(config, lexicon)?;
    let log = trainer.train(dataset, seen, |_| {})?;
    Ok((trainer.checkpoint(), log))
}

/// Rebuilds the model stored in a checkpoint against `lexicon`.
pub fn model_from_checkpoint(ckpt: &Checkpoint, lexicon: Arc<Lexicon>) -> Result<Model, TrainError> {
    ckpt.verify(&lexicon)?;
    let config = ModelConfig {
        encoder: ckpt.config.encoder.clone(),
        channels: ckpt.config.channels.clone(),
    };
    Ok(Model::new(lexicon, config, ckpt.params.clone())?)
}
