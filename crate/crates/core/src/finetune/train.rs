use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, Graph, OptimizerState, Tensor};
use crate::encoder::Dropout;
use crate::rng::{stream, Stream};

use super::model::batch_input;
use super::{accuracy, f1_binary, pearson, EncodedExample, FinetuneError, GridPoint, HeadType, Metric, Precision, Split, TaskModel, TaskSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub max_len: usize,
}

impl Default for FinetuneOptions {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 16,
            max_len: 128,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FinetuneResult {
    /// Weights from the epoch with the best dev score.
    pub model: TaskModel,
    pub dev_score: f64,
    /// 1-based.
    pub best_epoch: usize,
    pub dev_scores: Vec<f64>,
}

/// Scores `examples` with the task metric. Regression outputs are clipped
/// to the label range first.
pub fn evaluate(model: &TaskModel, spec: &TaskSpec, examples: &[EncodedExample], batch_size: usize) -> Result<f64, FinetuneError> {
    let rows = model.outputs(examples, batch_size)?;
    match spec.head_type {
        HeadType::Regression => {
            let pred: Vec<f64> = rows
                .iter()
                .map(|r| {
                    let v = r[0] as f64;
                    spec.label_range.map_or(v, |(lo, hi)| v.clamp(lo, hi))
                })
                .collect();
            let gold: Vec<f64> = examples.iter().map(|e| e.label).collect();
            // A collapsed model (e.g. every prediction clipped to one end of
            // the range) carries no linear signal: score it 0 instead of
            // failing the run. Constant gold labels remain an error.
            if pred.len() >= 2 && pred.iter().all(|&p| p == pred[0]) && gold.iter().any(|&g| g != gold[0]) {
                log::warn!("constant predictions; correlation scored as 0");
                return Ok(0.0);
            }
            pearson(&pred, &gold)
        }
        HeadType::BinaryClassification => {
            let pred: Vec<usize> = rows.iter().map(|r| usize::from(r[1] > r[0])).collect();
            let gold: Vec<usize> = examples.iter().map(|e| e.label as usize).collect();
            match spec.metric {
                Metric::F1 => f1_binary(&pred, &gold, 1),
                _ => accuracy(&pred, &gold),
            }
        }
    }
}

fn round_to_half(model: &mut TaskModel) {
    for id in model.params.ids().collect::<Vec<_>>() {
        for v in model.params.get_mut(id).data_mut() {
            *v = half::f16::from_f32(*v).to_f32();
        }
    }
}

/// Whole-model fine-tuning at a constant learning rate, scoring dev after
/// every epoch and keeping the best epoch's weights (earliest on ties).
pub fn finetune(
    mut model: TaskModel,
    spec: &TaskSpec,
    train: &[EncodedExample],
    dev: &[EncodedExample],
    point: &GridPoint,
    options: &FinetuneOptions,
) -> Result<FinetuneResult, FinetuneError> {
    if train.is_empty() {
        return Err(FinetuneError::EmptySplit(Split::Train));
    }
    if dev.is_empty() {
        return Err(FinetuneError::EmptySplit(Split::Dev));
    }
    model.config.dropout_rate = point.dropout;
    if point.precision == Precision::Fp16 {
        round_to_half(&mut model);
    }
    let mut opt = OptimizerState::new(&model.params, AdamConfig::default());
    let mut best: Option<(f64, usize, TaskModel)> = None;
    let mut dev_scores = Vec::with_capacity(options.epochs);
    for epoch in 0..options.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut stream(point.seed, Stream::Shuffle, &[epoch as u64]));
        for (b, idx) in order.chunks(options.batch_size.max(1)).enumerate() {
            let batch: Vec<EncodedExample> = idx.iter().map(|&i| train[i].clone()).collect();
            let input = batch_input(&batch);
            let mut drng = stream(point.seed, Stream::Dropout, &[epoch as u64, b as u64]);
            let mut dropout = Dropout::train(point.dropout, &mut drng);
            let mut g = Graph::new();
            let y = model.forward(&mut g, &input, &mut dropout)?;
            let loss = match model.head_type {
                HeadType::Regression => {
                    let target = g.constant(Tensor::new(vec![batch.len(), 1], batch.iter().map(|e| e.label as f32).collect())?);
                    g.mse(y, target)?
                }
                HeadType::BinaryClassification => {
                    let labels: Vec<i64> = batch.iter().map(|e| e.label as i64).collect();
                    g.cross_entropy(y, &labels)?
                }
            };
            if !g.value(loss).item().is_finite() {
                return Err(FinetuneError::NonFinite { epoch });
            }
            g.backward(loss)?;
            opt.step(&mut model.params, &g.param_grads(), point.lr as f32)?;
            if point.precision == Precision::Fp16 {
                round_to_half(&mut model);
            }
        }
        let score = evaluate(&model, spec, dev, options.batch_size)?;
        dev_scores.push(score);
        if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
            best = Some((score, epoch + 1, model.clone()));
        }
    }
    let (dev_score, best_epoch, model) = match best {
        Some(b) => b,
        None => {
            let s = evaluate(&model, spec, dev, options.batch_size)?;
            (s, 0, model)
        }
    };
    Ok(FinetuneResult {
        model,
        dev_score,
        best_epoch,
        dev_scores,
    })
}
