use std::path::{Path, PathBuf};

use crate::autodiff::{AdamConfig, AutodiffError, Graph, OptimizerState, ParamId, Tensor, IGNORE_INDEX};
use crate::encoder::{encoder_forward, enhanced_mask_states, mlm_logits, Checkpoint, Dropout, Encoder, EncoderConfig, EncoderInput};
use crate::rng::{stream, Stream};
use crate::tokenizer::{SpecialIds, TokenizerModel};

use super::{apply_mlm_masking, lr_at, make_batches, LossLog, MicroBatch, PretrainError, TrainRunConfig};

/// Documents with fewer subword tokens than this are not trained on.
pub const MIN_DOCUMENT_TOKENS: usize = 8;

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub encoder: Encoder,
    pub log: LossLog,
    /// Optimizer steps taken.
    pub steps: u64,
    /// Epochs started.
    pub epochs: u64,
    pub checkpoints: Vec<PathBuf>,
}

/// One `[CLS] … [SEP]` sequence per document, truncated to `seq_len`.
pub fn prepare_sequences<'a>(
    texts: impl IntoIterator<Item = &'a str>,
    tokenizer: &TokenizerModel,
    seq_len: usize,
) -> Result<Vec<Vec<u32>>, PretrainError> {
    let mut out = Vec::new();
    let mut skipped = 0usize;
    for text in texts {
        if tokenizer.tokenize(text).len() < MIN_DOCUMENT_TOKENS {
            skipped += 1;
            continue;
        }
        out.push(tokenizer.encode(text, seq_len, true)?.ids);
    }
    if skipped > 0 {
        log::info!("skipped {skipped} documents shorter than {MIN_DOCUMENT_TOKENS} tokens");
    }
    Ok(out)
}

/// Tokenizes `texts` and pre-trains on them.
pub fn train<'a>(
    config: &TrainRunConfig,
    texts: impl IntoIterator<Item = &'a str>,
    tokenizer: &TokenizerModel,
) -> Result<TrainOutcome, PretrainError> {
    let seqs = prepare_sequences(texts, tokenizer, config.seq_len)?;
    train_sequences(config, &seqs, tokenizer.specials(), tokenizer.vocab_size())
}

fn initial_encoder(config: &TrainRunConfig, vocab_size: usize) -> Result<Encoder, PretrainError> {
    let mut enc = match &config.init_checkpoint {
        Some(path) => {
            let enc = Encoder::from_checkpoint(Checkpoint::load(path)?)?;
            if enc.config.vocab_size != vocab_size {
                return Err(PretrainError::InvalidConfig(format!(
                    "checkpoint vocabulary {} differs from tokenizer vocabulary {vocab_size}",
                    enc.config.vocab_size
                )));
            }
            enc
        }
        None => Encoder::new(EncoderConfig::preset(config.preset, vocab_size), config.seed)?,
    };
    if let Some(rate) = config.dropout_rate {
        enc.config.dropout_rate = rate;
    }
    if config.seq_len > enc.config.max_seq_len {
        return Err(PretrainError::InvalidConfig(format!(
            "seq_len {} exceeds the encoder's max_seq_len {}",
            config.seq_len, enc.config.max_seq_len
        )));
    }
    Ok(enc)
}

/// Masked, padded inputs of one micro-batch plus the flattened positions
/// and labels of the selected tokens.
fn build_micro_batch(
    config: &TrainRunConfig,
    seqs: &[Vec<u32>],
    mb: &MicroBatch,
    specials: &SpecialIds,
    vocab_size: usize,
    epoch: u64,
) -> (EncoderInput, Vec<usize>, Vec<i64>) {
    let w = mb.width;
    let b = mb.indices.len();
    let mut input = EncoderInput {
        batch: b,
        seq: w,
        ids: vec![specials.pad; b * w],
        segments: vec![0; b * w],
        keep: vec![false; b * w],
    };
    let (mut positions, mut labels) = (Vec::new(), Vec::new());
    for (row, &idx) in mb.indices.iter().enumerate() {
        let seq = &seqs[idx][..seqs[idx].len().min(w)];
        let mut rng = stream(config.seed, Stream::Masking, &[epoch, idx as u64]);
        let (ids, labs, _) = apply_mlm_masking(seq, specials, vocab_size, config.mask_rate, &mut rng);
        for (t, (&id, &lab)) in ids.iter().zip(&labs).enumerate() {
            input.ids[row * w + t] = id;
            input.keep[row * w + t] = true;
            if lab != IGNORE_INDEX {
                positions.push(row * w + t);
                labels.push(lab);
            }
        }
    }
    (input, positions, labels)
}

fn save_checkpoint(enc: &Encoder, dir: &Path, file: &str, step: u64, epoch: u64, seed: u64) -> Result<PathBuf, PretrainError> {
    std::fs::create_dir_all(dir)?;
    let mut ckpt = enc.to_checkpoint();
    ckpt.metadata.insert("kind".into(), "pretrain".into());
    ckpt.metadata.insert("step".into(), step.to_string());
    ckpt.metadata.insert("epoch".into(), epoch.to_string());
    ckpt.metadata.insert("seed".into(), seed.to_string());
    let path = dir.join(file);
    ckpt.save(&path)?;
    Ok(path)
}

/// Pre-trains on already tokenized sequences. One optimizer step consumes
/// `accumulation_steps` micro-batches; their gradients are averaged with
/// weights equal to each micro-batch's number of masked labels, so the
/// update equals that of one large batch.
pub fn train_sequences(
    config: &TrainRunConfig,
    seqs: &[Vec<u32>],
    specials: SpecialIds,
    vocab_size: usize,
) -> Result<TrainOutcome, PretrainError> {
    config.validate()?;
    if seqs.is_empty() {
        return Err(PretrainError::EmptyCorpus);
    }
    let mut enc = initial_encoder(config, vocab_size)?;
    let lengths: Vec<usize> = seqs.iter().map(Vec::len).collect();
    let mut opt = OptimizerState::new(&enc.params, AdamConfig::default());
    let mut log = LossLog::default();
    let mut checkpoints = Vec::new();

    let mut epoch = 0u64;
    let mut batches = make_batches(&lengths, config.micro_batch_size, config.seq_len, config.seed, epoch)?;
    let mut cursor = 0usize;
    let mut steps = 0u64;
    'outer: while steps < config.total_steps {
        let lr = lr_at(steps, config.warmup_steps, config.total_steps, config.peak_lr);
        let mut acc: Vec<(ParamId, Vec<f32>)> = Vec::new();
        let (mut total_labels, mut weighted_loss) = (0usize, 0.0f64);
        for micro in 0..config.accumulation_steps {
            if cursor == batches.len() {
                epoch += 1;
                if config.epochs > 0 && epoch >= config.epochs {
                    break 'outer;
                }
                batches = make_batches(&lengths, config.micro_batch_size, config.seq_len, config.seed, epoch)?;
                cursor = 0;
            }
            let (input, positions, labels) = build_micro_batch(config, seqs, &batches[cursor], &specials, vocab_size, epoch);
            cursor += 1;
            if labels.is_empty() {
                continue;
            }
            let mut drng = stream(config.seed, Stream::Dropout, &[steps, micro as u64]);
            let mut dropout = Dropout::train(enc.config.dropout_rate, &mut drng);
            let mut g = Graph::new();
            let out = encoder_forward(&mut g, &enc.params, &enc.config, &input, &mut dropout)?;
            let states = enhanced_mask_states(&mut g, &enc.params, &enc.config, &out, &mut dropout)?;
            let logits = mlm_logits(&mut g, &enc.params, &enc.config, states, Some(&positions))?;
            let loss = g.cross_entropy(logits, &labels)?;
            let value = g.value(loss).item() as f64;
            if !value.is_finite() {
                return Err(abort(config, &enc, steps, epoch));
            }
            g.backward(loss)?;
            let n = labels.len() as f32;
            for (id, grad) in g.param_grads() {
                match acc.iter_mut().find(|(i, _)| *i == id) {
                    Some((_, sum)) => sum.iter_mut().zip(grad.data()).for_each(|(s, v)| *s += n * v),
                    None => acc.push((id, grad.data().iter().map(|v| n * v).collect())),
                }
            }
            total_labels += labels.len();
            weighted_loss += value * labels.len() as f64;
        }
        if total_labels == 0 {
            log::warn!("step {steps} drew no masked tokens; skipping the update");
            steps += 1;
            continue;
        }
        let inv = 1.0 / total_labels as f32;
        let grads: Vec<(ParamId, Tensor)> = acc
            .into_iter()
            .map(|(id, sum)| {
                let shape = enc.params.get(id).shape().to_vec();
                (id, Tensor::new(shape, sum.into_iter().map(|v| v * inv).collect()).expect("shape from parameter"))
            })
            .collect();
        match opt.step(&mut enc.params, &grads, lr as f32) {
            Ok(()) => {}
            Err(AutodiffError::NonFiniteGradient { .. }) => return Err(abort(config, &enc, steps, epoch)),
            Err(e) => return Err(e.into()),
        }
        steps += 1;
        log.push(steps, epoch, lr, weighted_loss / total_labels as f64);
        if let Some(dir) = &config.output_dir {
            if config.checkpoint_every > 0 && steps.is_multiple_of(config.checkpoint_every) && steps < config.total_steps {
                checkpoints.push(save_checkpoint(&enc, dir, &format!("step-{steps:06}.ckpt"), steps, epoch, config.seed)?);
            }
        }
    }
    if let Some(dir) = &config.output_dir {
        checkpoints.push(save_checkpoint(&enc, dir, "final.ckpt", steps, epoch, config.seed)?);
        std::fs::write(dir.join("loss.csv"), log.to_csv())?;
    }
    Ok(TrainOutcome {
        encoder: enc,
        log,
        steps,
        epochs: epoch + 1,
        checkpoints,
    })
}

/// The parameters have not been touched by the failing step, so they are
/// the last good state.
fn abort(config: &TrainRunConfig, enc: &Encoder, step: u64, epoch: u64) -> PretrainError {
    let last_good = config
        .output_dir
        .as_ref()
        .and_then(|dir| save_checkpoint(enc, dir, "last-good.ckpt", step, epoch, config.seed).ok());
    PretrainError::NonFinite { step, last_good }
}
