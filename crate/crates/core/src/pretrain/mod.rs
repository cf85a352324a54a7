//! Unsupervised encoder initialization over every utterance of a corpus.
//!
//! Two objectives are available: a recurrent autoencoder that reconstructs
//! each utterance from its embedding, and quick-thoughts, which picks the
//! utterance that follows a target out of the other contexts in its batch.
//! Both hold out a fraction of instances for early stopping and return the
//! model from the epoch with the lowest held-out loss.

mod autoencoder;
mod quickthoughts;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{make_dev_split, Corpus, Utterance};
use crate::encoders::Encoder;
use crate::error::{Error, Result};
use crate::rng;

pub use autoencoder::{pretrain_autoencoder, AeModel, EOS};
pub use quickthoughts::{adjacent_pairs, pretrain_quickthoughts, qt_score, QtModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    None,
    Autoencoder,
    Quickthoughts,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Method::None),
            "autoencoder" => Ok(Method::Autoencoder),
            "quickthoughts" => Ok(Method::Quickthoughts),
            other => Err(Error::Usage(format!(
                "unknown pretraining method {other:?} (expected none, autoencoder or quickthoughts)"
            ))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::None => "none",
            Method::Autoencoder => "autoencoder",
            Method::Quickthoughts => "quickthoughts",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub epochs: usize,
    /// Epochs without a held-out improvement before stopping.
    pub patience: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub dev_fraction: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 10,
            patience: 3,
            batch_size: 32,
            learning_rate: 0.001,
            dev_fraction: 0.1,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("pretraining needs at least one epoch"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome<M> {
    /// Model from `best_epoch`.
    pub model: M,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub initial_dev_loss: f64,
}

impl<M> PretrainOutcome<M> {
    pub fn best_dev_loss(&self) -> f64 {
        self.log[self.best_epoch - 1].dev_loss
    }
}

/// Train/dev instance indices. Corpora too small to split use every instance
/// for both.
fn split_instances(n: usize, config: &PretrainConfig) -> Result<(Vec<usize>, Vec<usize>)> {
    if n == 0 {
        return Err(Error::invalid("cannot pretrain on an empty corpus"));
    }
    if n < 2 {
        return Ok(((0..n).collect(), (0..n).collect()));
    }
    let split = make_dev_split(n, config.dev_fraction, config.seed)?;
    Ok((split.train, split.dev))
}

/// Every utterance of the given instances, query first, in dialog order.
pub fn corpus_utterances(corpus: &Corpus, indices: &[usize]) -> Vec<Utterance> {
    indices
        .iter()
        .flat_map(|&i| corpus.instances[i].dialog().cloned())
        .collect()
}

trait Objective: Clone {
    type Item: Clone;

    /// One optimizer step on `batch`; returns the batch loss before the step.
    fn train_batch(&mut self, batch: &[Self::Item], lr: f64) -> Result<f64>;

    fn eval_loss(&self, items: &[Self::Item], batch_size: usize) -> Result<f64>;
}

fn fit<M: Objective>(
    mut model: M,
    mut train: Vec<M::Item>,
    dev: Vec<M::Item>,
    config: &PretrainConfig,
) -> Result<PretrainOutcome<M>> {
    let initial_dev_loss = model.eval_loss(&dev, config.batch_size)?;
    let mut rng = rng::derive(config.seed, 0x70_72_65);
    let mut best: Option<(M, usize, f64)> = None;
    let mut log = Vec::new();
    let mut stale = 0;
    for epoch in 1..=config.epochs {
        train.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for batch in train.chunks(config.batch_size) {
            total += model.train_batch(batch, config.learning_rate)?;
            batches += 1;
        }
        let train_loss = total / batches.max(1) as f64;
        let dev_loss = model.eval_loss(&dev, config.batch_size)?;
        if !dev_loss.is_finite() {
            return Err(Error::Numeric(format!("held-out loss is {dev_loss} at epoch {epoch}")));
        }
        log::info!("epoch {epoch}: train loss {train_loss:.5}, dev loss {dev_loss:.5}");
        log.push(EpochRecord {
            epoch,
            train_loss,
            dev_loss,
        });
        match &best {
            Some((_, _, b)) if dev_loss >= *b => {
                stale += 1;
                if stale >= config.patience {
                    break;
                }
            }
            _ => {
                best = Some((model.clone(), epoch, dev_loss));
                stale = 0;
            }
        }
    }
    let (model, best_epoch, _) = best.expect("at least one epoch ran");
    Ok(PretrainOutcome {
        model,
        log,
        best_epoch,
        initial_dev_loss,
    })
}

/// Checks that a pretrained encoder fits the corpus vocabulary.
pub fn check_vocabulary(encoder: &Encoder, corpus: &Corpus) -> Result<()> {
    if encoder.embeddings().rows() != corpus.vocabulary.len() {
        return Err(Error::Checkpoint(format!(
            "encoder has {} word vectors but the corpus vocabulary has {} words",
            encoder.embeddings().rows(),
            corpus.vocabulary.len()
        )));
    }
    Ok(())
}
