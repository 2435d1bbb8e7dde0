use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Graph, ParamStore, Tensor, Var};

use super::attention::{disentangled_attention, linear, mask_bias, AttentionTrace};
use super::{EncoderConfig, EncoderError};

/// Dropout policy for one forward pass. `Dropout::off()` is evaluation mode.
pub struct Dropout<'r> {
    rate: f32,
    rng: Option<&'r mut ChaCha8Rng>,
}

impl<'r> Dropout<'r> {
    pub fn off() -> Self {
        Self { rate: 0.0, rng: None }
    }

    pub fn train(rate: f32, rng: &'r mut ChaCha8Rng) -> Self {
        Self { rate, rng: Some(rng) }
    }

    pub fn rate(&self) -> f32 {
        self.rate
    }

    pub fn apply(&mut self, g: &mut Graph, x: Var) -> Var {
        match self.rng.as_deref_mut() {
            Some(rng) if self.rate > 0.0 => g.dropout(x, self.rate, rng),
            _ => x,
        }
    }
}

/// A padded batch of token sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderInput {
    pub batch: usize,
    pub seq: usize,
    pub ids: Vec<u32>,
    pub segments: Vec<u8>,
    /// `true` for real tokens, `false` for padding.
    pub keep: Vec<bool>,
}

impl EncoderInput {
    /// Pads variable-length sequences to their longest member.
    pub fn from_sequences(seqs: &[(Vec<u32>, Vec<u8>)], pad_id: u32) -> Self {
        let batch = seqs.len();
        let seq = seqs.iter().map(|(ids, _)| ids.len()).max().unwrap_or(0);
        let mut out = Self {
            batch,
            seq,
            ids: vec![pad_id; batch * seq],
            segments: vec![0; batch * seq],
            keep: vec![false; batch * seq],
        };
        for (b, (ids, segs)) in seqs.iter().enumerate() {
            for (t, &id) in ids.iter().enumerate() {
                out.ids[b * seq + t] = id;
                out.segments[b * seq + t] = segs.get(t).copied().unwrap_or(0);
                out.keep[b * seq + t] = true;
            }
        }
        out
    }

    fn validate(&self, config: &EncoderConfig) -> Result<(), EncoderError> {
        let n = self.batch * self.seq;
        if self.ids.len() != n || self.segments.len() != n || self.keep.len() != n || n == 0 {
            return Err(EncoderError::InputShape(format!(
                "batch {} × seq {} does not match ids {}, segments {}, mask {}",
                self.batch,
                self.seq,
                self.ids.len(),
                self.segments.len(),
                self.keep.len()
            )));
        }
        if self.seq > config.max_seq_len {
            return Err(EncoderError::SequenceTooLong {
                len: self.seq,
                max: config.max_seq_len,
            });
        }
        if let Some(&id) = self.ids.iter().find(|&&id| id as usize >= config.vocab_size) {
            return Err(EncoderError::TokenOutOfRange {
                id,
                vocab: config.vocab_size,
            });
        }
        if let Some(&s) = self.segments.iter().find(|&&s| s as usize >= config.type_vocab_size) {
            return Err(EncoderError::InputShape(format!("segment id {s} out of range")));
        }
        Ok(())
    }
}

/// Hidden states of every stage of a forward pass.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// `hidden[0]` is the embedding output; `hidden[l]` the output of layer `l`.
    pub hidden: Vec<Var>,
    pub mask: Var,
    pub rel: Var,
    /// Attention internals of every encoder layer, in order.
    pub traces: Vec<AttentionTrace>,
}

impl EncoderOutput {
    pub fn last(&self) -> Var {
        *self.hidden.last().expect("at least the embedding output")
    }
}

/// Names and shapes of every encoder parameter, in registration order.
pub fn parameter_layout(config: &EncoderConfig, include_mlm: bool) -> Vec<(String, Vec<usize>)> {
    let h = config.hidden_size;
    let mut out: Vec<(String, Vec<usize>)> = vec![
        ("embeddings.word".into(), vec![config.vocab_size, h]),
        ("embeddings.segment".into(), vec![config.type_vocab_size, h]),
        ("embeddings.ln.gain".into(), vec![h]),
        ("embeddings.ln.bias".into(), vec![h]),
        ("rel_embeddings".into(), vec![2 * config.relative_window, h]),
        ("layers.0.conv.weight".into(), vec![config.conv_kernel_size, h, h]),
        ("layers.0.conv.bias".into(), vec![h]),
    ];
    let mut block = |prefix: String| {
        for lin in ["query", "key", "value", "output"] {
            out.push((format!("{prefix}.attention.{lin}.weight"), vec![h, h]));
            out.push((format!("{prefix}.attention.{lin}.bias"), vec![h]));
        }
        out.push((format!("{prefix}.attention.ln.gain"), vec![h]));
        out.push((format!("{prefix}.attention.ln.bias"), vec![h]));
        out.push((format!("{prefix}.ffn.intermediate.weight"), vec![h, config.ffn_size]));
        out.push((format!("{prefix}.ffn.intermediate.bias"), vec![config.ffn_size]));
        out.push((format!("{prefix}.ffn.output.weight"), vec![config.ffn_size, h]));
        out.push((format!("{prefix}.ffn.output.bias"), vec![h]));
        out.push((format!("{prefix}.ffn.ln.gain"), vec![h]));
        out.push((format!("{prefix}.ffn.ln.bias"), vec![h]));
    };
    for l in 0..config.num_layers {
        block(format!("layers.{l}"));
    }
    if include_mlm {
        for m in 0..config.emd_layers {
            block(format!("emd.layers.{m}"));
        }
        out.push(("emd.abs_pos".into(), vec![config.max_seq_len, h]));
        out.push(("mlm.dense.weight".into(), vec![h, h]));
        out.push(("mlm.dense.bias".into(), vec![h]));
        out.push(("mlm.ln.gain".into(), vec![h]));
        out.push(("mlm.ln.bias".into(), vec![h]));
        out.push(("mlm.bias".into(), vec![config.vocab_size]));
    }
    out
}

/// Random initialization: N(0, init_std) for matrices, embeddings and
/// kernels; zeros for biases; ones for layer-norm gains.
pub fn init_params(config: &EncoderConfig, rng: &mut impl Rng) -> Result<ParamStore, EncoderError> {
    config.validate()?;
    let normal = Normal::new(0.0f32, config.init_std).map_err(|e| EncoderError::InvalidConfig(e.to_string()))?;
    let mut store = ParamStore::new();
    for (name, shape) in parameter_layout(config, true) {
        let t = if name.ends_with(".gain") {
            Tensor::full(&shape, 1.0)
        } else if name.ends_with("bias") {
            Tensor::zeros(&shape)
        } else {
            let n = shape.iter().product();
            Tensor::new(shape, (0..n).map(|_| normal.sample(rng)).collect())?
        };
        store.insert(name, t)?;
    }
    Ok(store)
}

/// Checks that `params` holds every tensor the encoder needs, with the
/// shapes implied by `config`.
pub fn validate_params(config: &EncoderConfig, params: &ParamStore, include_mlm: bool) -> Result<(), EncoderError> {
    config.validate()?;
    for (name, shape) in parameter_layout(config, include_mlm) {
        let t = params
            .by_name(&name)
            .ok_or_else(|| EncoderError::MissingTensor(name.clone()))?;
        if t.shape() != shape.as_slice() {
            return Err(EncoderError::TensorShape {
                name,
                expected: shape,
                found: t.shape().to_vec(),
            });
        }
    }
    Ok(())
}

fn param(g: &mut Graph, params: &ParamStore, name: &str) -> Result<Var, EncoderError> {
    Ok(g.param(params, params.require(name)?))
}

fn layer_norm(g: &mut Graph, params: &ParamStore, config: &EncoderConfig, prefix: &str, x: Var) -> Result<Var, EncoderError> {
    let gain = param(g, params, &format!("{prefix}.gain"))?;
    let bias = param(g, params, &format!("{prefix}.bias"))?;
    Ok(g.layer_norm(x, gain, bias, config.layer_norm_eps)?)
}

/// One post-norm Transformer block with disentangled attention. With
/// `conv`, a same-padded convolution of `kv_in` is added to the attention
/// output before the residual and norm.
#[allow(clippy::too_many_arguments)]
pub fn transformer_block(
    g: &mut Graph,
    params: &ParamStore,
    config: &EncoderConfig,
    prefix: &str,
    query_in: Var,
    kv_in: Var,
    rel: Var,
    mask: Var,
    conv: Option<(&str, &[bool])>,
    dropout: &mut Dropout<'_>,
) -> Result<(Var, AttentionTrace), EncoderError> {
    let attn_prefix = format!("{prefix}.attention");
    let trace = disentangled_attention(g, params, config, &attn_prefix, query_in, kv_in, rel, mask, dropout)?;
    let a = linear(g, params, &format!("{attn_prefix}.output"), trace.context)?;
    let mut a = dropout.apply(g, a);
    if let Some((conv_prefix, keep)) = conv {
        let w = param(g, params, &format!("{conv_prefix}.weight"))?;
        let b = param(g, params, &format!("{conv_prefix}.bias"))?;
        let c = g.conv1d(kv_in, w, b, Some(keep))?;
        a = g.add(a, c)?;
    }
    let res = g.add(query_in, a)?;
    let h1 = layer_norm(g, params, config, &format!("{attn_prefix}.ln"), res)?;
    let f = linear(g, params, &format!("{prefix}.ffn.intermediate"), h1)?;
    let f = g.gelu(f);
    let f = linear(g, params, &format!("{prefix}.ffn.output"), f)?;
    let f = dropout.apply(g, f);
    let res = g.add(h1, f)?;
    let out = layer_norm(g, params, config, &format!("{prefix}.ffn.ln"), res)?;
    Ok((out, trace))
}

/// Embeddings plus all encoder layers. Layer 0 additionally runs the
/// convolution branch over its input.
pub fn encoder_forward(
    g: &mut Graph,
    params: &ParamStore,
    config: &EncoderConfig,
    input: &EncoderInput,
    dropout: &mut Dropout<'_>,
) -> Result<EncoderOutput, EncoderError> {
    input.validate(config)?;
    let (batch, seq) = (input.batch, input.seq);
    let word = param(g, params, "embeddings.word")?;
    let seg = param(g, params, "embeddings.segment")?;
    let ids: Vec<usize> = input.ids.iter().map(|&i| i as usize).collect();
    let segs: Vec<usize> = input.segments.iter().map(|&s| s as usize).collect();
    let we = g.embedding(word, &ids, &[batch, seq])?;
    let se = g.embedding(seg, &segs, &[batch, seq])?;
    let x = g.add(we, se)?;
    let x = layer_norm(g, params, config, "embeddings.ln", x)?;
    let x = dropout.apply(g, x);

    let rel = param(g, params, "rel_embeddings")?;
    let mask = mask_bias(g, &input.keep, batch, seq)?;
    let mut hidden = vec![x];
    let mut traces = Vec::with_capacity(config.num_layers);
    let mut h = x;
    for l in 0..config.num_layers {
        let conv = (l == 0).then_some(("layers.0.conv", input.keep.as_slice()));
        let (out, trace) = transformer_block(g, params, config, &format!("layers.{l}"), h, h, rel, mask, conv, dropout)?;
        h = out;
        hidden.push(h);
        traces.push(trace);
    }
    Ok(EncoderOutput {
        hidden,
        mask,
        rel,
        traces,
    })
}

/// Enhanced mask decoder: the query stream starts from the last hidden
/// state plus absolute position embeddings and is refined by `emd_layers`
/// blocks whose keys and values come from the last hidden state.
///
/// Returns the final query-stream states `[batch, seq, hidden]`.
pub fn enhanced_mask_states(
    g: &mut Graph,
    params: &ParamStore,
    config: &EncoderConfig,
    encoded: &EncoderOutput,
    dropout: &mut Dropout<'_>,
) -> Result<Var, EncoderError> {
    let h = encoded.last();
    let (batch, seq, hidden) = {
        let s = g.shape(h);
        (s[0], s[1], s[2])
    };
    let table = param(g, params, "emd.abs_pos")?;
    let positions: Vec<usize> = (0..batch).flat_map(|_| 0..seq).collect();
    let abs = g.embedding(table, &positions, &[batch, seq])?;
    debug_assert_eq!(g.shape(abs), [batch, seq, hidden]);
    let mut query = g.add(h, abs)?;
    for m in 0..config.emd_layers {
        let (out, _) = transformer_block(
            g,
            params,
            config,
            &format!("emd.layers.{m}"),
            query,
            h,
            encoded.rel,
            encoded.mask,
            None,
            dropout,
        )?;
        query = out;
    }
    Ok(query)
}

/// MLM head over selected rows of `states`. `positions` index the flattened
/// `[batch·seq]` axis; `None` scores every position. The output projection
/// is the word-embedding table itself.
pub fn mlm_logits(
    g: &mut Graph,
    params: &ParamStore,
    config: &EncoderConfig,
    states: Var,
    positions: Option<&[usize]>,
) -> Result<Var, EncoderError> {
    let s = g.shape(states).to_vec();
    let rows = s[0] * s[1];
    let flat = g.reshape(states, &[rows, s[2]])?;
    let selected = match positions {
        Some(p) => g.embedding(flat, p, &[p.len()])?,
        None => flat,
    };
    let z = linear(g, params, "mlm.dense", selected)?;
    let z = g.gelu(z);
    let z = layer_norm(g, params, config, "mlm.ln", z)?;
    let word = param(g, params, "embeddings.word")?;
    let logits = g.matmul_t(z, word, false, true)?;
    let bias = param(g, params, "mlm.bias")?;
    Ok(g.add(logits, bias)?)
}

/// Full MLM logits `[batch, seq, vocab]`.
pub fn enhanced_mask_decode(
    g: &mut Graph,
    params: &ParamStore,
    config: &EncoderConfig,
    encoded: &EncoderOutput,
    dropout: &mut Dropout<'_>,
) -> Result<Var, EncoderError> {
    let states = enhanced_mask_states(g, params, config, encoded, dropout)?;
    let s = g.shape(states).to_vec();
    let logits = mlm_logits(g, params, config, states, None)?;
    Ok(g.reshape(logits, &[s[0], s[1], config.vocab_size])?)
}
