use serde::{Deserialize, Serialize};

use super::EncoderError;

/// Architecture hyperparameters of the encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub hidden_size: usize,
    pub num_heads: usize,
    pub ffn_size: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    /// Relative-position window `k`; the position table has `2k` rows.
    pub relative_window: usize,
    pub dropout_rate: f32,
    /// Number of enhanced-mask-decoder layers.
    pub emd_layers: usize,
    pub conv_kernel_size: usize,
    #[serde(default = "default_type_vocab")]
    pub type_vocab_size: usize,
    #[serde(default = "default_ln_eps")]
    pub layer_norm_eps: f32,
    #[serde(default = "default_init_std")]
    pub init_std: f32,
}

fn default_type_vocab() -> usize {
    2
}

fn default_ln_eps() -> f32 {
    1e-7
}

fn default_init_std() -> f32 {
    0.02
}

/// Named architecture presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// 2 layers, hidden 64. Used by tests.
    Micro,
    /// 4 layers, hidden 128, 4 heads, 128-token sequences.
    Tiny,
    /// 12 layers, hidden 768 (the 100M-parameter base family).
    Base,
    /// 24 layers, hidden 1536 (the 900M-parameter family).
    Xlarge,
}

impl EncoderConfig {
    pub fn preset(preset: Preset, vocab_size: usize) -> Self {
        let (num_layers, hidden_size, num_heads, ffn_size, max_seq_len) = match preset {
            Preset::Micro => (2, 64, 4, 128, 128),
            Preset::Tiny => (4, 128, 4, 512, 128),
            Preset::Base => (12, 768, 12, 3072, 512),
            Preset::Xlarge => (24, 1536, 24, 6144, 512),
        };
        let relative_window = match preset {
            Preset::Micro | Preset::Tiny => 32,
            Preset::Base | Preset::Xlarge => 256,
        };
        Self {
            num_layers,
            hidden_size,
            num_heads,
            ffn_size,
            vocab_size,
            max_seq_len,
            relative_window,
            dropout_rate: 0.1,
            emd_layers: 1,
            conv_kernel_size: 3,
            type_vocab_size: default_type_vocab(),
            layer_norm_eps: default_ln_eps(),
            init_std: default_init_std(),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.num_heads
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        let fail = |msg: String| Err(EncoderError::InvalidConfig(msg));
        if self.num_heads == 0 || !self.hidden_size.is_multiple_of(self.num_heads) {
            return fail(format!(
                "hidden_size {} is not divisible by num_heads {}",
                self.hidden_size, self.num_heads
            ));
        }
        if self.relative_window == 0 {
            return fail("relative_window must be at least 1".into());
        }
        if self.emd_layers == 0 {
            return fail("emd_layers must be at least 1".into());
        }
        if self.conv_kernel_size.is_multiple_of(2) {
            return fail(format!("conv_kernel_size {} must be odd", self.conv_kernel_size));
        }
        if self.num_layers == 0 || self.vocab_size == 0 || self.max_seq_len == 0 || self.type_vocab_size == 0 {
            return fail("layer count, vocabulary, sequence length and type vocabulary must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        Ok(())
    }
}
