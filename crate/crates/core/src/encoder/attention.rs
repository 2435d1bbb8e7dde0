use crate::autodiff::{Graph, ParamStore, Var};

use super::{Dropout, EncoderConfig, EncoderError};

/// Additive surrogate for −∞ at masked key positions.
pub const MASK_SURROGATE: f32 = -1e9;

/// Maps the signed distance `i − j` into `[0, 2k)`: distances at or below
/// `−k` share bucket 0, distances at or above `k` share bucket `2k − 1`.
pub fn relative_bucket(i: usize, j: usize, k: usize) -> usize {
    let delta = i as i64 - j as i64;
    let k = k as i64;
    if delta <= -k {
        0
    } else if delta >= k {
        (2 * k - 1) as usize
    } else {
        (delta + k) as usize
    }
}

/// Intermediate tensors of one disentangled-attention call, all
/// `[batch, heads, seq, seq]` except `context`.
#[derive(Debug, Clone, Copy)]
pub struct AttentionTrace {
    /// Content-to-content term `Qc·Kcᵀ`.
    pub c2c: Var,
    /// Content-to-position term `Qc_i·Kr_{δ(i,j)}`.
    pub c2p: Var,
    /// Position-to-content term `Kc_j·Qr_{δ(j,i)}`.
    pub p2c: Var,
    /// Scaled sum of the three terms plus the mask surrogate (pre-softmax).
    pub scores: Var,
    pub probs: Var,
    /// `[batch, seq, hidden]`.
    pub context: Var,
}

/// Additive key mask `[batch, 1, 1, seq]` built from per-token keep flags.
pub fn mask_bias(g: &mut Graph, keep: &[bool], batch: usize, seq: usize) -> Result<Var, EncoderError> {
    for b in 0..batch {
        if !keep[b * seq..(b + 1) * seq].iter().any(|&k| k) {
            return Err(EncoderError::EmptyAttentionRow { batch_index: b });
        }
    }
    let data = keep.iter().map(|&k| if k { 0.0 } else { MASK_SURROGATE }).collect();
    Ok(g.constant(crate::autodiff::Tensor::new(vec![batch, 1, 1, seq], data)?))
}

pub(crate) fn linear(g: &mut Graph, params: &ParamStore, prefix: &str, x: Var) -> Result<Var, EncoderError> {
    let w = g.param(params, params.require(&format!("{prefix}.weight"))?);
    let b = g.param(params, params.require(&format!("{prefix}.bias"))?);
    let shape = g.shape(x).to_vec();
    let inner = *shape.last().expect("rank ≥ 1");
    let rows = shape.iter().product::<usize>() / inner.max(1);
    let flat = g.reshape(x, &[rows, inner])?;
    let y = g.matmul(flat, w)?;
    let y = g.add(y, b)?;
    let mut out_shape = shape;
    *out_shape.last_mut().expect("rank ≥ 1") = g.shape(w)[1];
    Ok(g.reshape(y, &out_shape)?)
}

/// Projects the position table with a shared content matrix (no bias) and
/// lays it out per head: `[2k, hidden] → [heads, 2k, head_dim]`.
fn project_positions(
    g: &mut Graph,
    params: &ParamStore,
    prefix: &str,
    rel: Var,
    heads: usize,
) -> Result<Var, EncoderError> {
    let w = g.param(params, params.require(&format!("{prefix}.weight"))?);
    let rows = g.shape(rel)[0];
    let hidden = g.shape(w)[1];
    let p = g.matmul(rel, w)?;
    let p = g.reshape(p, &[rows, heads, hidden / heads])?;
    Ok(g.permute(p, &[1, 0, 2])?)
}

fn split_heads(g: &mut Graph, x: Var, heads: usize) -> Result<Var, EncoderError> {
    let s = g.shape(x).to_vec();
    let x = g.reshape(x, &[s[0], s[1], heads, s[2] / heads])?;
    Ok(g.permute(x, &[0, 2, 1, 3])?)
}

/// Picks `m[.., r, bucket(r, c)]` for every `(r, c)` from `m` of shape
/// `[lead, rows, 2k]`, giving `[lead, rows, rows]`.
fn gather_relative(g: &mut Graph, m: Var, window: usize) -> Result<Var, EncoderError> {
    let s = g.shape(m).to_vec();
    let (rows, width) = (s[s.len() - 2], s[s.len() - 1]);
    let lead: usize = s[..s.len() - 2].iter().product();
    let total = lead * rows * width;
    let flat = g.reshape(m, &[total, 1])?;
    let mut ids = Vec::with_capacity(lead * rows * rows);
    for l in 0..lead {
        for r in 0..rows {
            let base = (l * rows + r) * width;
            ids.extend((0..rows).map(|c| base + relative_bucket(r, c, window)));
        }
    }
    let mut out_shape = s[..s.len() - 1].to_vec();
    out_shape.push(rows);
    let gathered = g.embedding(flat, &ids, &out_shape)?;
    Ok(g.reshape(gathered, &out_shape)?)
}

/// Disentangled self-attention.
///
/// `query_in` supplies the query stream and `kv_in` the key/value stream;
/// they are the same node everywhere except in the enhanced mask decoder.
/// The query and key matrices of `prefix` project both the content states
/// and the relative-position table `rel` (`[2k, hidden]`).
#[allow(clippy::too_many_arguments)]
pub fn disentangled_attention(
    g: &mut Graph,
    params: &ParamStore,
    config: &EncoderConfig,
    prefix: &str,
    query_in: Var,
    kv_in: Var,
    rel: Var,
    mask: Var,
    dropout: &mut Dropout<'_>,
) -> Result<AttentionTrace, EncoderError> {
    let heads = config.num_heads;
    let seq = g.shape(kv_in)[1];
    if seq > config.max_seq_len {
        return Err(EncoderError::SequenceTooLong {
            len: seq,
            max: config.max_seq_len,
        });
    }
    if g.shape(rel)[0] != 2 * config.relative_window {
        return Err(EncoderError::InvalidConfig(format!(
            "position table has {} rows, expected 2k = {}",
            g.shape(rel)[0],
            2 * config.relative_window
        )));
    }
    let q_prefix = format!("{prefix}.query");
    let k_prefix = format!("{prefix}.key");
    let q = linear(g, params, &q_prefix, query_in)?;
    let k = linear(g, params, &k_prefix, kv_in)?;
    let v = linear(g, params, &format!("{prefix}.value"), kv_in)?;
    let (q, k, v) = (split_heads(g, q, heads)?, split_heads(g, k, heads)?, split_heads(g, v, heads)?);
    let qr = project_positions(g, params, &q_prefix, rel, heads)?;
    let kr = project_positions(g, params, &k_prefix, rel, heads)?;

    let c2c = g.matmul_t(q, k, false, true)?;
    let c2p_full = g.matmul_t(q, kr, false, true)?;
    let c2p = gather_relative(g, c2p_full, config.relative_window)?;
    let p2c_full = g.matmul_t(k, qr, false, true)?;
    let p2c_t = gather_relative(g, p2c_full, config.relative_window)?;
    let p2c = g.transpose(p2c_t)?;

    let sum = g.add(c2c, c2p)?;
    let sum = g.add(sum, p2c)?;
    let scaled = g.scale(sum, 1.0 / ((3 * config.head_dim()) as f32).sqrt());
    let scores = g.add(scaled, mask)?;
    let probs = g.softmax(scores, 3)?;
    let probs_d = dropout.apply(g, probs);
    let ctx = g.matmul(probs_d, v)?;
    let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
    let s = g.shape(query_in).to_vec();
    let context = g.reshape(ctx, &s)?;
    Ok(AttentionTrace {
        c2c,
        c2p,
        p2c,
        scores,
        probs,
        context,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bucket_examples() {
        assert_eq!(relative_bucket(5, 5, 32), 32);
        assert_eq!(relative_bucket(0, 40, 32), 0);
        assert_eq!(relative_bucket(35, 0, 32), 63);
        assert_eq!(relative_bucket(0, 32, 32), 0);
        assert_eq!(relative_bucket(0, 31, 32), 1);
        assert_eq!(relative_bucket(32, 0, 32), 63);
        assert_eq!(relative_bucket(31, 0, 32), 63);
        assert_eq!(relative_bucket(30, 0, 32), 62);
    }

    #[test]
    fn bucket_range_for_small_window() {
        for i in 0..10 {
            for j in 0..10 {
                assert!(relative_bucket(i, j, 1) < 2);
            }
        }
    }
}
