//! Loop-based f64 reference implementation of the encoder, written
//! independently of the tape so it can serve as a forward and
//! finite-difference oracle.

use std::collections::BTreeMap;

use lusoforge::autodiff::ParamStore;
use lusoforge::encoder::EncoderConfig;

pub type Params64 = BTreeMap<String, (Vec<usize>, Vec<f64>)>;
/// `[seq][hidden]` for one batch element.
pub type Mat = Vec<Vec<f64>>;

pub fn to_f64(p: &ParamStore) -> Params64 {
    p.iter()
        .map(|(_, n, t)| (n.to_string(), (t.shape().to_vec(), t.data().iter().map(|&v| v as f64).collect())))
        .collect()
}

fn get<'a>(p: &'a Params64, name: &str) -> &'a [f64] {
    &p.get(name).unwrap_or_else(|| panic!("missing {name}")).1
}

pub fn bucket(i: usize, j: usize, k: usize) -> usize {
    (i as i64 - j as i64 + k as i64).clamp(0, 2 * k as i64 - 1) as usize
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn linear_rows(x: &Mat, w: &[f64], b: Option<&[f64]>, out_dim: usize) -> Mat {
    x.iter()
        .map(|row| {
            (0..out_dim)
                .map(|o| {
                    let mut s = b.map_or(0.0, |b| b[o]);
                    for (c, xv) in row.iter().enumerate() {
                        s += xv * w[c * out_dim + o];
                    }
                    s
                })
                .collect()
        })
        .collect()
}

fn linear(p: &Params64, prefix: &str, x: &Mat) -> Mat {
    let (shape, w) = &p[&format!("{prefix}.weight")];
    linear_rows(x, w, Some(get(p, &format!("{prefix}.bias"))), shape[1])
}

fn layer_norm(p: &Params64, prefix: &str, x: &Mat, eps: f64) -> Mat {
    let g = get(p, &format!("{prefix}.gain"));
    let b = get(p, &format!("{prefix}.bias"));
    x.iter()
        .map(|row| {
            let d = row.len() as f64;
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            row.iter()
                .enumerate()
                .map(|(c, v)| (v - mean) / (var + eps).sqrt() * g[c] + b[c])
                .collect()
        })
        .collect()
}

fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(u, v)| u + v).collect()).collect()
}

/// Per-term attention scores, flattened `[batch, head, i, j]`.
#[derive(Debug, Clone, Default)]
pub struct RefAttention {
    pub c2c: Vec<f64>,
    pub c2p: Vec<f64>,
    pub p2c: Vec<f64>,
    pub probs: Vec<f64>,
}

/// Disentangled attention over one batch. `keep[b][j]` masks keys.
pub fn attention(
    p: &Params64,
    cfg: &EncoderConfig,
    prefix: &str,
    query: &[Mat],
    kv: &[Mat],
    keep: &[Vec<bool>],
    with_positions: bool,
) -> (Vec<Mat>, RefAttention) {
    let (heads, d, k) = (cfg.num_heads, cfg.head_dim(), cfg.relative_window);
    let hidden = cfg.hidden_size;
    let rel: Mat = get(p, "rel_embeddings").chunks(hidden).map(<[f64]>::to_vec).collect();
    let wq = get(p, &format!("{prefix}.query.weight"));
    let wk = get(p, &format!("{prefix}.key.weight"));
    let qr = linear_rows(&rel, wq, None, hidden);
    let kr = linear_rows(&rel, wk, None, hidden);
    let scale = 1.0 / ((3 * d) as f64).sqrt();
    let mut trace = RefAttention::default();
    let mut contexts = Vec::new();
    for b in 0..query.len() {
        let q = linear(p, &format!("{prefix}.query"), &query[b]);
        let kk = linear(p, &format!("{prefix}.key"), &kv[b]);
        let v = linear(p, &format!("{prefix}.value"), &kv[b]);
        let s = q.len();
        let mut ctx = vec![vec![0.0; hidden]; s];
        for h in 0..heads {
            let dot = |a: &[f64], c: &[f64]| (h * d..(h + 1) * d).map(|x| a[x] * c[x]).sum::<f64>();
            for i in 0..s {
                let mut row = Vec::with_capacity(s);
                for j in 0..s {
                    let c2c = dot(&q[i], &kk[j]);
                    let (c2p, p2c) = if with_positions {
                        (dot(&q[i], &kr[bucket(i, j, k)]), dot(&kk[j], &qr[bucket(j, i, k)]))
                    } else {
                        (0.0, 0.0)
                    };
                    trace.c2c.push(c2c);
                    trace.c2p.push(c2p);
                    trace.p2c.push(p2c);
                    row.push(if keep[b][j] { (c2c + c2p + p2c) * scale } else { f64::NEG_INFINITY });
                }
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
                let z: f64 = e.iter().sum();
                for (j, ej) in e.iter().enumerate() {
                    let pr = ej / z;
                    trace.probs.push(pr);
                    for x in h * d..(h + 1) * d {
                        ctx[i][x] += pr * v[j][x];
                    }
                }
            }
        }
        contexts.push(ctx);
    }
    (contexts, trace)
}

fn conv(p: &Params64, prefix: &str, x: &Mat, keep: &[bool]) -> Mat {
    let (shape, w) = &p[&format!("{prefix}.weight")];
    let bias = get(p, &format!("{prefix}.bias"));
    let (kernel, cin, cout) = (shape[0], shape[1], shape[2]);
    let s = x.len() as i64;
    (0..s)
        .map(|t| {
            let mut out = bias.to_vec();
            for kk in 0..kernel {
                let src = t + kk as i64 - (kernel / 2) as i64;
                if src < 0 || src >= s || !keep[src as usize] {
                    continue;
                }
                for c in 0..cin {
                    for (o, y) in out.iter_mut().enumerate() {
                        *y += x[src as usize][c] * w[(kk * cin + c) * cout + o];
                    }
                }
            }
            out
        })
        .collect()
}

/// Post-norm block; `with_conv` adds the convolution of `kv` before the residual.
pub fn block(
    p: &Params64,
    cfg: &EncoderConfig,
    prefix: &str,
    query: &[Mat],
    kv: &[Mat],
    keep: &[Vec<bool>],
    with_conv: bool,
) -> (Vec<Mat>, RefAttention) {
    let eps = cfg.layer_norm_eps as f64;
    let (ctx, trace) = attention(p, cfg, &format!("{prefix}.attention"), query, kv, keep, true);
    let out = (0..query.len())
        .map(|b| {
            let mut a = linear(p, &format!("{prefix}.attention.output"), &ctx[b]);
            if with_conv {
                a = add(&a, &conv(p, "layers.0.conv", &kv[b], &keep[b]));
            }
            let h1 = layer_norm(p, &format!("{prefix}.attention.ln"), &add(&query[b], &a), eps);
            let f: Mat = linear(p, &format!("{prefix}.ffn.intermediate"), &h1)
                .into_iter()
                .map(|r| r.into_iter().map(gelu).collect())
                .collect();
            let f = linear(p, &format!("{prefix}.ffn.output"), &f);
            layer_norm(p, &format!("{prefix}.ffn.ln"), &add(&h1, &f), eps)
        })
        .collect();
    (out, trace)
}

pub struct RefOutput {
    /// Embedding output followed by every layer output.
    pub hidden: Vec<Vec<Mat>>,
    pub traces: Vec<RefAttention>,
    pub emd: Vec<Mat>,
    /// `[batch][seq][vocab]`.
    pub logits: Vec<Mat>,
}

pub fn forward(p: &Params64, cfg: &EncoderConfig, ids: &[Vec<u32>], segs: &[Vec<u8>], keep: &[Vec<bool>]) -> RefOutput {
    let h = cfg.hidden_size;
    let eps = cfg.layer_norm_eps as f64;
    let word = get(p, "embeddings.word");
    let seg = get(p, "embeddings.segment");
    let emb: Vec<Mat> = ids
        .iter()
        .zip(segs)
        .map(|(row, srow)| {
            let x: Mat = row
                .iter()
                .zip(srow)
                .map(|(&i, &s)| (0..h).map(|c| word[i as usize * h + c] + seg[s as usize * h + c]).collect())
                .collect();
            layer_norm(p, "embeddings.ln", &x, eps)
        })
        .collect();
    let mut hidden = vec![emb];
    let mut traces = Vec::new();
    for l in 0..cfg.num_layers {
        let x = hidden.last().unwrap().clone();
        let (out, t) = block(p, cfg, &format!("layers.{l}"), &x, &x, keep, l == 0);
        hidden.push(out);
        traces.push(t);
    }
    let last = hidden.last().unwrap().clone();
    let abs = get(p, "emd.abs_pos");
    let mut query: Vec<Mat> = last
        .iter()
        .map(|m| m.iter().enumerate().map(|(t, r)| r.iter().enumerate().map(|(c, v)| v + abs[t * h + c]).collect()).collect())
        .collect();
    for m in 0..cfg.emd_layers {
        query = block(p, cfg, &format!("emd.layers.{m}"), &query, &last, keep, false).0;
    }
    let bias = get(p, "mlm.bias");
    let logits = query
        .iter()
        .map(|states| {
            let z: Mat = linear(p, "mlm.dense", states)
                .into_iter()
                .map(|r| r.into_iter().map(gelu).collect())
                .collect();
            let z = layer_norm(p, "mlm.ln", &z, eps);
            z.iter()
                .map(|r| {
                    (0..cfg.vocab_size)
                        .map(|vv| bias[vv] + (0..h).map(|c| r[c] * word[vv * h + c]).sum::<f64>())
                        .collect()
                })
                .collect()
        })
        .collect();
    RefOutput {
        hidden,
        traces,
        emd: query,
        logits,
    }
}

/// Mean cross-entropy over `labels` (flattened `[batch·seq]`, negative = ignored).
pub fn mlm_loss(logits: &[Mat], labels: &[i64]) -> f64 {
    let rows: Vec<&Vec<f64>> = logits.iter().flatten().collect();
    let (mut total, mut n) = (0.0, 0);
    for (r, &l) in labels.iter().enumerate() {
        if l < 0 {
            continue;
        }
        let row = rows[r];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        total += lse - row[l as usize];
        n += 1;
    }
    total / n as f64
}
