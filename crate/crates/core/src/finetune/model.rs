use rand_distr::{Distribution, Normal};

use crate::autodiff::{Graph, ParamStore, Tensor, Var};
use crate::encoder::{encoder_forward, Checkpoint, EncoderError, parameter_layout, validate_params, Dropout, Encoder, EncoderConfig, EncoderInput};
use crate::rng::{stream, Stream};

use super::{EncodedExample, FinetuneError, HeadType};

/// Encoder body plus a linear head on the final `[CLS]` state.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskModel {
    pub config: EncoderConfig,
    pub params: ParamStore,
    pub head_type: HeadType,
}

/// Copies the encoder body (the pre-training decoder and MLM head are not
/// needed) and adds a freshly initialized head. Every tensor is trainable.
pub fn attach_head(encoder: &Encoder, head_type: HeadType, dropout: f32, seed: u64) -> Result<TaskModel, FinetuneError> {
    let mut config = encoder.config.clone();
    config.dropout_rate = dropout;
    validate_params(&config, &encoder.params, false)?;
    let mut params = ParamStore::new();
    for (name, _) in parameter_layout(&config, false) {
        let t = encoder.params.by_name(&name).expect("validated").clone();
        params.insert(name, t)?;
    }
    let (h, out) = (config.hidden_size, head_type.outputs());
    let normal = Normal::new(0.0f32, config.init_std).map_err(|e| FinetuneError::Format(e.to_string()))?;
    let mut rng = stream(seed, Stream::Head, &[]);
    params.insert("head.weight", Tensor::new(vec![h, out], (0..h * out).map(|_| normal.sample(&mut rng)).collect())?)?;
    params.insert("head.bias", Tensor::zeros(&[out]))?;
    for id in params.ids().collect::<Vec<_>>() {
        params.set_trainable(id, true);
    }
    Ok(TaskModel {
        config,
        params,
        head_type,
    })
}

impl TaskModel {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::new(self.config.clone(), self.params.clone());
        ckpt.metadata.insert("kind".into(), "task".into());
        let head = match self.head_type {
            HeadType::Regression => "regression",
            HeadType::BinaryClassification => "binary_classification",
        };
        ckpt.metadata.insert("head_type".into(), head.into());
        ckpt
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self, FinetuneError> {
        let head_type = match ckpt.metadata.get("head_type").map(String::as_str) {
            Some("regression") => HeadType::Regression,
            Some("binary_classification") => HeadType::BinaryClassification,
            other => return Err(FinetuneError::Format(format!("not a task checkpoint (head_type {other:?})"))),
        };
        validate_params(&ckpt.config, &ckpt.params, false)?;
        let expected = [ckpt.config.hidden_size, head_type.outputs()];
        for (name, shape) in [("head.weight", &expected[..]), ("head.bias", &expected[1..])] {
            let t = ckpt.params.by_name(name).ok_or_else(|| EncoderError::MissingTensor(name.into()))?;
            if t.shape() != shape {
                return Err(EncoderError::TensorShape {
                    name: name.into(),
                    expected: shape.to_vec(),
                    found: t.shape().to_vec(),
                }
                .into());
            }
        }
        Ok(Self {
            config: ckpt.config,
            params: ckpt.params,
            head_type,
        })
    }

    /// Head outputs `[batch, 1]` (regression) or `[batch, 2]` (logits).
    pub fn forward(&self, g: &mut Graph, input: &EncoderInput, dropout: &mut Dropout<'_>) -> Result<Var, FinetuneError> {
        let out = encoder_forward(g, &self.params, &self.config, input, dropout)?;
        let h = out.last();
        let flat = g.reshape(h, &[input.batch * input.seq, self.config.hidden_size])?;
        let cls: Vec<usize> = (0..input.batch).map(|b| b * input.seq).collect();
        let pooled = g.embedding(flat, &cls, &[input.batch])?;
        let pooled = dropout.apply(g, pooled);
        let w = g.param(&self.params, self.params.require("head.weight")?);
        let b = g.param(&self.params, self.params.require("head.bias")?);
        let y = g.matmul(pooled, w)?;
        Ok(g.add(y, b)?)
    }

    /// Evaluation-mode outputs, one row per example, in batches.
    pub fn outputs(&self, examples: &[EncodedExample], batch_size: usize) -> Result<Vec<Vec<f32>>, FinetuneError> {
        let mut rows = Vec::with_capacity(examples.len());
        for chunk in examples.chunks(batch_size.max(1)) {
            let input = batch_input(chunk);
            let mut g = Graph::new();
            let y = self.forward(&mut g, &input, &mut Dropout::off())?;
            let t = g.value(y);
            rows.extend(t.data().chunks(t.last_dim()).map(<[f32]>::to_vec));
        }
        Ok(rows)
    }
}

pub(crate) fn batch_input(examples: &[EncodedExample]) -> EncoderInput {
    let seqs: Vec<(Vec<u32>, Vec<u8>)> = examples.iter().map(|e| (e.seq.ids.clone(), e.seq.segments.clone())).collect();
    // Pad id 0 is masked out of attention, so its value never matters.
    EncoderInput::from_sequences(&seqs, 0)
}
