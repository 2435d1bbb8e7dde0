//! Fine-tuning and evaluation: pair-sentence tasks, CLS-pooled heads,
//! metrics, and the 36-point hyperparameter grid with dev-based selection
//! and three-seed averaging.

mod data;
mod grid;
mod metrics;
mod model;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::EncoderError;

pub use data::{
    encode_examples, import_assin2, load_task_tsv, save_task_tsv, split_train_dev, Assin2, EncodedExample, TaskData,
    ASSIN2_SIZES,
};
pub use grid::{full_grid, run_grid, summary_csv, ConfigRow, MetricsReport, RunRecord};
pub use metrics::{accuracy, f1_binary, pearson};
pub use model::{attach_head, TaskModel};
pub use train::{evaluate, finetune, FinetuneOptions, FinetuneResult};

#[derive(Debug, Error)]
pub enum FinetuneError {
    #[error("undefined correlation: an input has zero variance")]
    UndefinedCorrelation,
    #[error("metric inputs must have equal length ≥ {min}, got {pred} and {gold}")]
    MetricLength { pred: usize, gold: usize, min: usize },
    #[error("need at least 2 examples to split, got {0}")]
    TooFewExamples(usize),
    #[error("dev_fraction must lie in (0, 1), got {0}")]
    DevFraction(f64),
    #[error("the {0} split is empty")]
    EmptySplit(Split),
    #[error("label {label} is invalid for task `{task}`")]
    InvalidLabel { task: String, label: f64 },
    #[error("metric {metric:?} does not fit a {head:?} head")]
    IncompatibleMetric { metric: Metric, head: HeadType },
    #[error("empty grid")]
    EmptyGrid,
    #[error("non-finite loss in epoch {epoch}")]
    NonFinite { epoch: usize },
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Tokenizer(#[from] crate::tokenizer::TokenizerError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Xml(#[from] quick_xml::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<crate::autodiff::AutodiffError> for FinetuneError {
    fn from(e: crate::autodiff::AutodiffError) -> Self {
        FinetuneError::Encoder(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

/// A sentence pair with a real-valued score or a class id stored as `0.0`/`1.0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskExample {
    pub sentence_a: String,
    pub sentence_b: String,
    pub label: f64,
    pub split: Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadType {
    Regression,
    BinaryClassification,
}

impl HeadType {
    pub fn outputs(self) -> usize {
        match self {
            HeadType::Regression => 1,
            HeadType::BinaryClassification => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Pearson,
    Accuracy,
    F1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub head_type: HeadType,
    pub metric: Metric,
    /// Inclusive label range of regression tasks; predictions are clipped to it.
    pub label_range: Option<(f64, f64)>,
}

impl TaskSpec {
    pub fn new(name: &str, head_type: HeadType, metric: Metric, label_range: Option<(f64, f64)>) -> Result<Self, FinetuneError> {
        let ok = matches!(
            (head_type, metric),
            (HeadType::Regression, Metric::Pearson) | (HeadType::BinaryClassification, Metric::Accuracy | Metric::F1)
        );
        if !ok {
            return Err(FinetuneError::IncompatibleMetric { metric, head: head_type });
        }
        Ok(Self {
            name: name.to_string(),
            head_type,
            metric,
            label_range,
        })
    }

    /// Built-in task definitions by name: `assin2-sts`, `assin2-rte`,
    /// `stsb`, `rte`, `wnli`, `mrpc`.
    pub fn named(name: &str) -> Option<Self> {
        let (head, metric, range) = match name {
            "assin2-sts" | "sts" => (HeadType::Regression, Metric::Pearson, Some((1.0, 5.0))),
            "stsb" => (HeadType::Regression, Metric::Pearson, Some((0.0, 5.0))),
            "assin2-rte" | "rte" | "wnli" => (HeadType::BinaryClassification, Metric::Accuracy, None),
            "mrpc" => (HeadType::BinaryClassification, Metric::F1, None),
            _ => return None,
        };
        Self::new(name, head, metric, range).ok()
    }

    pub fn validate_label(&self, label: f64) -> Result<(), FinetuneError> {
        let ok = match (self.head_type, self.label_range) {
            (HeadType::BinaryClassification, _) => label == 0.0 || label == 1.0,
            (HeadType::Regression, Some((lo, hi))) => (lo..=hi).contains(&label),
            (HeadType::Regression, None) => label.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(FinetuneError::InvalidLabel {
                task: self.name.clone(),
                label,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Fp32,
    /// Parameters are rounded to the nearest half-precision value after
    /// every optimizer step; arithmetic stays in single precision.
    Fp16,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub dropout: f32,
    pub lr: f64,
    pub precision: Precision,
    pub seed: u64,
}

impl GridPoint {
    /// Everything except the seed.
    pub fn config_key(&self) -> (u32, u64, Precision) {
        (self.dropout.to_bits(), self.lr.to_bits(), self.precision)
    }
}
