//! Encoder checks shared by the acceptance suite and the encoder tests.

use lusoforge::autodiff::{Graph, ParamStore, Tensor};
use lusoforge::encoder::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::gradcheck::{check_params, Check};
use super::oracle::{self, Mat};

pub struct Batch {
    pub ids: Vec<Vec<u32>>,
    pub segs: Vec<Vec<u8>>,
    pub input: EncoderInput,
    pub keep: Vec<Vec<bool>>,
}

/// Two sequences of lengths 8 and 6 (so the second is padded).
pub fn small_batch(vocab: u32) -> Batch {
    let ids: Vec<Vec<u32>> = vec![
        (0..8).map(|t| (t * 7 + 5) % vocab).collect(),
        (0..6).map(|t| (t * 11 + 9) % vocab).collect(),
    ];
    let segs: Vec<Vec<u8>> = vec![vec![0, 0, 0, 0, 1, 1, 1, 1], vec![0; 6]];
    let input = EncoderInput::from_sequences(&[(ids[0].clone(), segs[0].clone()), (ids[1].clone(), segs[1].clone())], 0);
    let keep = input.keep.chunks(input.seq).map(<[bool]>::to_vec).collect();
    let pad = |v: &Vec<u32>| {
        let mut v = v.clone();
        v.resize(input.seq, 0);
        v
    };
    let pad_s = |v: &Vec<u8>| {
        let mut v = v.clone();
        v.resize(input.seq, 0);
        v
    };
    Batch {
        ids: ids.iter().map(pad).collect(),
        segs: segs.iter().map(pad_s).collect(),
        input,
        keep,
    }
}

/// Replaces zero biases and unit gains with random values so that every
/// parameter has a generic gradient.
pub fn randomize(params: &mut ParamStore, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0f32, 0.1).unwrap();
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let gain = params.name(id).ends_with(".gain");
        let bias = params.name(id).ends_with("bias");
        for v in params.get_mut(id).data_mut() {
            if gain {
                *v = 1.0 + noise.sample(&mut rng);
            } else if bias {
                *v = noise.sample(&mut rng);
            }
        }
    }
}

pub fn micro_model(seed: u64) -> Encoder {
    let mut cfg = EncoderConfig::preset(Preset::Micro, 64);
    cfg.dropout_rate = 0.0;
    let mut enc = Encoder::new(cfg, seed).unwrap();
    randomize(&mut enc.params, seed + 1);
    enc
}

/// Finite-difference checks of every parameter of the `micro` preset
/// under the masked-LM loss.
pub fn gradient_fidelity(directions: usize) -> Vec<Check> {
    let enc = micro_model(7);
    let batch = small_batch(64);
    let labels: Vec<i64> = (0..16).map(|i| if i % 3 == 1 && i != 13 { (i * 5 % 64) as i64 } else { -100 }).collect();
    let mut g = Graph::new();
    let mut off = Dropout::off();
    let out = encoder_forward(&mut g, &enc.params, &enc.config, &batch.input, &mut off).unwrap();
    let states = enhanced_mask_states(&mut g, &enc.params, &enc.config, &out, &mut off).unwrap();
    let logits = mlm_logits(&mut g, &enc.params, &enc.config, states, None).unwrap();
    let loss = g.cross_entropy(logits, &labels).unwrap();
    g.backward(loss).unwrap();
    let grads = g.param_grads();
    assert_eq!(grads.len(), enc.params.len(), "every parameter receives a gradient");
    let base = oracle::to_f64(&enc.params);
    check_params(&enc.params, &base, &grads, directions, 3, |p| {
        let r = oracle::forward(p, &enc.config, &batch.ids, &batch.segs, &batch.keep);
        oracle::mlm_loss(&r.logits, &labels)
    })
}

fn max_diff(t: &Tensor, reference: &[f64], keep: Option<&dyn Fn(usize) -> bool>) -> f64 {
    t.data()
        .iter()
        .zip(reference)
        .enumerate()
        .filter(|(i, _)| keep.is_none_or(|k| k(*i)))
        .map(|(_, (a, b))| (*a as f64 - b).abs())
        .fold(0.0, f64::max)
}

pub fn mat_diff(t: &Tensor, reference: &[Mat]) -> f64 {
    let flat: Vec<f64> = reference.iter().flatten().flatten().copied().collect();
    max_diff(t, &flat, None)
}

#[derive(Debug)]
pub struct AttentionOracle {
    /// Zeroed position table vs naive softmax(QKᵀ/sqrt(3d))V.
    pub zeroed_p_context: f64,
    pub zeroed_p_probs: f64,
    pub c2c: f64,
    pub c2p: f64,
    pub p2c: f64,
    pub probs: f64,
}

/// Compares the first encoder layer's attention with the loop oracles.
pub fn attention_oracle() -> AttentionOracle {
    let mut enc = micro_model(11);
    let batch = small_batch(64);
    let run = |enc: &Encoder, with_positions: bool| {
        let mut g = Graph::new();
        let out = encoder_forward(&mut g, &enc.params, &enc.config, &batch.input, &mut Dropout::off()).unwrap();
        let x = g.value(out.hidden[0]).clone();
        let t = out.traces[0];
        let query: Vec<Mat> = x.data().chunks(x.shape()[1] * 64).map(|b| b.chunks(64).map(|r| r.iter().map(|&v| v as f64).collect()).collect()).collect();
        let p = oracle::to_f64(&enc.params);
        let (ctx, trace) = oracle::attention(&p, &enc.config, "layers.0.attention", &query, &query, &batch.keep, with_positions);
        (g.value(t.c2c).clone(), g.value(t.c2p).clone(), g.value(t.p2c).clone(), g.value(t.probs).clone(), g.value(t.context).clone(), ctx, trace)
    };
    let (c2c, c2p, p2c, probs, _, _, trace) = run(&enc, true);
    let seq = batch.input.seq;
    // Probabilities at masked keys are exactly zero on both sides; compare
    // only real query rows so padded rows do not dominate.
    let keep = batch.input.keep.clone();
    let heads = enc.config.num_heads;
    let real_row = move |i: usize| keep[(i / (heads * seq * seq)) * seq + (i / seq) % seq];
    let result_terms = (
        max_diff(&c2c, &trace.c2c, None),
        max_diff(&c2p, &trace.c2p, None),
        max_diff(&p2c, &trace.p2c, None),
        max_diff(&probs, &trace.probs, Some(&real_row)),
    );
    let id = enc.params.require("rel_embeddings").unwrap();
    let shape = enc.params.get(id).shape().to_vec();
    enc.params.set(id, Tensor::zeros(&shape)).unwrap();
    let (_, _, _, probs0, ctx0, ref_ctx, ref_trace) = run(&enc, false);
    AttentionOracle {
        zeroed_p_context: mat_diff(&ctx0, &ref_ctx),
        zeroed_p_probs: max_diff(&probs0, &ref_trace.probs, Some(&real_row)),
        c2c: result_terms.0,
        c2p: result_terms.1,
        p2c: result_terms.2,
        probs: result_terms.3,
    }
}
