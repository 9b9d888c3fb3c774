//! Joint optimization of the encoder and the enabled workers.

mod check;
mod checkpoint;
mod data;
mod step;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsp::{HOP, WINDOW};
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{invalid, Result};
use crate::nn::{Graph, ParamStore, Scalar, Var};
use crate::workers::{WorkerConfig, WorkerName, Workers};

pub use check::{gradient_suite, sinc_check, stack_check, STACK_PROBES};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use data::{Batch, ChunkRef, PreparedUtterance, TrainingSet, Utterance};
pub use step::{sample_plans, worker_losses, EpochRecord, Plans, StepReport, Trainer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub halving_period_epochs: usize,
    pub epochs: usize,
    pub batch_size_chunks: usize,
    pub chunk_samples: usize,
    pub enabled_workers: Vec<WorkerName>,
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub workers: WorkerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-4,
            halving_period_epochs: 30,
            epochs: 150,
            batch_size_chunks: 32,
            chunk_samples: 16_000,
            enabled_workers: WorkerName::ALL.to_vec(),
            seed: 0,
            encoder: EncoderConfig::full(),
            workers: WorkerConfig::full(),
        }
    }
}

impl TrainConfig {
    /// Narrow model for single-core runs; optimization settings unchanged.
    pub fn desk() -> Self {
        TrainConfig { encoder: EncoderConfig::desk(), workers: WorkerConfig::desk(), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.halving_period_epochs == 0 || self.epochs == 0 || self.batch_size_chunks == 0 {
            return Err(invalid!("halving_period_epochs, epochs and batch_size_chunks must be positive"));
        }
        if !self.chunk_samples.is_multiple_of(HOP) || self.chunk_samples < WINDOW {
            return Err(invalid!("chunk_samples must be a multiple of {HOP} and at least {WINDOW}, got {}", self.chunk_samples));
        }
        if self.enabled_workers.is_empty() {
            return Err(invalid!("at least one worker must be enabled"));
        }
        for (i, w) in self.enabled_workers.iter().enumerate() {
            if self.enabled_workers[..i].contains(w) {
                return Err(invalid!("worker {w} listed twice"));
            }
        }
        self.encoder.validate()
    }

    /// Enabled workers in canonical order.
    pub fn enabled(&self) -> Vec<WorkerName> {
        WorkerName::ALL.into_iter().filter(|w| self.enabled_workers.contains(w)).collect()
    }

    pub fn is_enabled(&self, w: WorkerName) -> bool {
        self.enabled_workers.contains(&w)
    }

    /// The same run with one worker switched off.
    pub fn without(&self, drop: WorkerName) -> Result<Self> {
        if !self.is_enabled(drop) {
            return Err(invalid!("worker {drop} is not enabled"));
        }
        let mut c = self.clone();
        c.enabled_workers.retain(|&w| w != drop);
        c.validate()?;
        Ok(c)
    }

    /// Hash of everything that shapes a trajectory except the epoch budget,
    /// so a run may be extended from its checkpoint.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.epochs = 0;
        let json = serde_json::to_string(&c).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// `lr * 0.5^floor(epoch / period)`.
pub fn lr_at(epoch: usize, config: &TrainConfig) -> f64 {
    config.learning_rate * 0.5f64.powi((epoch / config.halving_period_epochs) as i32)
}

/// Arithmetic mean of the enabled workers' losses.
pub fn total_loss(losses: &[f64]) -> Result<f64> {
    if losses.is_empty() {
        return Err(invalid!("total loss of an empty worker set"));
    }
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// [`total_loss`] on the tape.
pub fn total_loss_node<F: Scalar>(g: &mut Graph<F>, losses: &[Var]) -> Result<Var> {
    g.mean(losses)
}

/// Encoder plus all seven heads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub encoder: Encoder,
    pub workers: Workers,
}

impl Model {
    pub fn new<F: Scalar>(encoder: &EncoderConfig, workers: &WorkerConfig, store: &mut ParamStore<F>, rng: &mut impl Rng) -> Result<Self> {
        let encoder = Encoder::new(encoder.clone(), store, rng)?;
        let workers = Workers::new(workers.clone(), encoder.embedding_dim(), store, rng);
        Ok(Model { encoder, workers })
    }
}

#[cfg(test)]
mod tests;
