//! DeBERTa-style encoder: disentangled relative-position attention with
//! shared content/position projections, a convolution branch in the first
//! layer, and an enhanced mask decoder feeding a weight-tied MLM head.

mod attention;
mod checkpoint;
mod config;
mod model;

use thiserror::Error;

use crate::autodiff::{AutodiffError, Graph, ParamStore};

pub use attention::{disentangled_attention, mask_bias, relative_bucket, AttentionTrace, MASK_SURROGATE};
pub use checkpoint::{Checkpoint, CheckpointHeader, TensorEntry, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{EncoderConfig, Preset};
pub use model::{
    encoder_forward, enhanced_mask_decode, enhanced_mask_states, init_params, mlm_logits, parameter_layout,
    transformer_block, validate_params, Dropout, EncoderInput, EncoderOutput,
};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
    #[error("sequence length {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("token id {id} outside vocabulary of size {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },
    #[error("invalid input: {0}")]
    InputShape(String),
    #[error("batch row {batch_index} has no unmasked token")]
    EmptyAttentionRow { batch_index: usize },
    #[error("checkpoint lacks tensor `{0}`")]
    MissingTensor(String),
    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    TensorShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint format version {0} is not supported")]
    UnsupportedCheckpointVersion(u32),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Configuration plus weights, with the MLM head.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub params: ParamStore,
}

impl Encoder {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self, EncoderError> {
        let mut rng = crate::rng::stream(seed, crate::rng::Stream::Init, &[]);
        let params = init_params(&config, &mut rng)?;
        Ok(Self { config, params })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self, EncoderError> {
        validate_params(&ckpt.config, &ckpt.params, true)?;
        Ok(Self {
            config: ckpt.config,
            params: ckpt.params,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.config.clone(), self.params.clone())
    }

    /// Final hidden states `[batch, seq, hidden]` in evaluation mode.
    pub fn hidden_states(&self, input: &EncoderInput) -> Result<crate::autodiff::Tensor, EncoderError> {
        let mut g = Graph::new();
        let out = encoder_forward(&mut g, &self.params, &self.config, input, &mut Dropout::off())?;
        Ok(g.value(out.last()).clone())
    }

    /// MLM logits `[batch, seq, vocab]` in evaluation mode.
    pub fn mlm_logits(&self, input: &EncoderInput) -> Result<crate::autodiff::Tensor, EncoderError> {
        let mut g = Graph::new();
        let mut off = Dropout::off();
        let out = encoder_forward(&mut g, &self.params, &self.config, input, &mut off)?;
        let logits = enhanced_mask_decode(&mut g, &self.params, &self.config, &out, &mut off)?;
        Ok(g.value(logits).clone())
    }
}
