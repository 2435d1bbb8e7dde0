//! Masked-language-model pre-training: masking, dynamic-padding batches,
//! warmup/linear-decay schedule, label-weighted gradient accumulation and
//! EMA-smoothed loss logging.

mod batches;
mod loss_log;
mod masking;
mod train;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{EncoderError, Preset};

pub use batches::{make_batches, MicroBatch};
pub use loss_log::{LossLog, LossRecord, EMA_SMOOTHING};
pub use masking::{apply_mlm_masking, MaskAction};
pub use train::{prepare_sequences, train, train_sequences, TrainOutcome, MIN_DOCUMENT_TOKENS};

#[derive(Debug, Error)]
pub enum PretrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("no training sequences")]
    EmptyCorpus,
    #[error("non-finite loss at step {step}; last good checkpoint: {last_good:?}")]
    NonFinite { step: u64, last_good: Option<PathBuf> },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Tokenizer(#[from] crate::tokenizer::TokenizerError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<crate::autodiff::AutodiffError> for PretrainError {
    fn from(e: crate::autodiff::AutodiffError) -> Self {
        PretrainError::Encoder(e.into())
    }
}

/// Every knob of a pre-training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainRunConfig {
    pub seed: u64,
    pub seq_len: usize,
    pub micro_batch_size: usize,
    pub accumulation_steps: usize,
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    /// Upper bound on passes over the data; 0 means as many as
    /// `total_steps` needs.
    pub epochs: u64,
    pub mask_rate: f64,
    pub preset: Preset,
    /// Overrides the preset's dropout rate.
    pub dropout_rate: Option<f32>,
    pub checkpoint_every: u64,
    pub output_dir: Option<PathBuf>,
    /// Continue from these weights instead of a random initialization.
    pub init_checkpoint: Option<PathBuf>,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            seq_len: 128,
            micro_batch_size: 8,
            accumulation_steps: 4,
            peak_lr: 1e-4,
            warmup_steps: 100,
            total_steps: 2000,
            epochs: 0,
            mask_rate: 0.15,
            preset: Preset::Tiny,
            dropout_rate: None,
            checkpoint_every: 500,
            output_dir: None,
            init_checkpoint: None,
        }
    }
}

/// Full-scale schedules, kept for reference; running them is out of reach
/// on one machine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceScale {
    /// 16 GPUs × 56 samples, ~200k steps over 50 epochs.
    XlargeBrazil,
    /// 8 GPUs × 52 samples with accumulation to 832, ~245k steps over 25 epochs.
    XlargePortugal,
    /// 16 GPUs × 192 samples, ~180k steps.
    Base,
}

impl TrainRunConfig {
    pub fn reference_scale(scale: ReferenceScale) -> Self {
        let (micro, accum, total, epochs, preset) = match scale {
            ReferenceScale::XlargeBrazil => (896, 1, 200_000, 50, Preset::Xlarge),
            ReferenceScale::XlargePortugal => (416, 2, 245_000, 25, Preset::Xlarge),
            ReferenceScale::Base => (3072, 1, 180_000, 0, Preset::Base),
        };
        Self {
            micro_batch_size: micro,
            accumulation_steps: accum,
            peak_lr: 1e-5,
            warmup_steps: 10_000,
            total_steps: total,
            epochs,
            preset,
            ..Self::default()
        }
    }

    pub fn effective_batch(&self) -> usize {
        self.micro_batch_size * self.accumulation_steps
    }

    pub fn validate(&self) -> Result<(), PretrainError> {
        let bad = |m: &str| Err(PretrainError::InvalidConfig(m.to_string()));
        if self.warmup_steps > self.total_steps {
            return bad("warmup_steps exceeds total_steps");
        }
        if !(0.0..=1.0).contains(&self.mask_rate) {
            return bad("mask_rate must lie in [0, 1]");
        }
        if self.micro_batch_size == 0 || self.accumulation_steps == 0 {
            return bad("batch sizes must be positive");
        }
        if self.seq_len < 3 {
            return bad("seq_len must leave room for [CLS] and [SEP]");
        }
        if !(self.peak_lr.is_finite() && self.peak_lr >= 0.0) {
            return bad("peak_lr must be finite and non-negative");
        }
        Ok(())
    }
}

/// Linear warmup from 0 to `peak_lr`, then linear decay to 0 at
/// `total_steps`. Steps past the end clamp to 0.
pub fn lr_at(step: u64, warmup_steps: u64, total_steps: u64, peak_lr: f64) -> f64 {
    if step > total_steps {
        log::warn!("step {step} is past total_steps {total_steps}; learning rate clamps to 0");
        return 0.0;
    }
    if step < warmup_steps {
        peak_lr * (step as f64 / warmup_steps as f64)
    } else if total_steps == warmup_steps {
        peak_lr
    } else {
        peak_lr * ((total_steps - step) as f64 / (total_steps - warmup_steps) as f64)
    }
}

#[cfg(test)]
mod tests;
