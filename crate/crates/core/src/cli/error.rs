use thiserror::Error;

use crate::corpus::CorpusError;
use crate::encoder::EncoderError;
use crate::finetune::FinetuneError;
use crate::pretrain::PretrainError;
use crate::tokenizer::TokenizerError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Failure classes, one per non-zero exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TokenizerError> for CliError {
    fn from(e: TokenizerError) -> Self {
        match e {
            TokenizerError::VocabTooSmall { .. } | TokenizerError::MaxLenTooSmall { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EncoderError> for CliError {
    fn from(e: EncoderError) -> Self {
        match e {
            EncoderError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<PretrainError> for CliError {
    fn from(e: PretrainError) -> Self {
        match e {
            PretrainError::NonFinite { .. } => CliError::Numerical(e.to_string()),
            PretrainError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            PretrainError::Encoder(e) => e.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<FinetuneError> for CliError {
    fn from(e: FinetuneError) -> Self {
        match e {
            FinetuneError::NonFinite { .. } => CliError::Numerical(e.to_string()),
            FinetuneError::DevFraction(_) | FinetuneError::EmptyGrid | FinetuneError::IncompatibleMetric { .. } => {
                CliError::Usage(e.to_string())
            }
            FinetuneError::Encoder(e) => e.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}
