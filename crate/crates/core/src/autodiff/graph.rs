use std::collections::HashMap;

use rand::Rng;

use super::kernels::{self, batched_gemm, fold_batches};
use super::tensor::strides;
use super::{AutodiffError, ParamId, ParamStore, Tensor};

/// Label value excluded from [`Graph::cross_entropy`].
pub const IGNORE_INDEX: i64 = -100;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        a: Var,
        factor: f32,
    },
    Softmax {
        a: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        /// Normalized input, kept for the backward pass.
        xhat: Vec<f32>,
        rstd: Vec<f32>,
    },
    Gelu {
        a: Var,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Conv1d {
        x: Var,
        weight: Var,
        bias: Var,
        keep: Option<Vec<bool>>,
    },
    Dropout {
        a: Var,
        scale: Vec<f32>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<i64>,
        probs: Vec<f32>,
        count: usize,
    },
    Permute {
        a: Var,
        perm: Vec<usize>,
    },
    Reshape {
        a: Var,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Tape of operator records built during a forward pass.
///
/// Nodes are appended in evaluation order, which is a topological order, so
/// [`Graph::backward`] simply walks the tape in reverse.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    param_order: Vec<(ParamId, Var)>,
    grads: Option<Vec<Option<Vec<f32>>>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf bound to a stored parameter. Repeated calls with the same id
    /// return the same node, so tied weights accumulate one gradient.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Leaf, store.is_trainable(id));
        self.params.insert(id, v);
        self.param_order.push((id, v));
        v
    }

    /// Matrix product over the last two axes, with optional transposes of
    /// either operand. Leading axes of `b` must match the trailing leading
    /// axes of `a` (or be absent); `b` is broadcast over the rest.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let mismatch = || AutodiffError::ShapeMismatch {
            op: "matmul",
            left: sa.clone(),
            right: sb.clone(),
        };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch());
        }
        let (ra, rb) = (sa.len() - 2, sb.len() - 2);
        let (m, ka) = if ta { (sa[ra + 1], sa[ra]) } else { (sa[ra], sa[ra + 1]) };
        let (kb, n) = if tb { (sb[rb + 1], sb[rb]) } else { (sb[rb], sb[rb + 1]) };
        if ka != kb || rb > ra || sa[ra - rb..ra] != sb[..rb] {
            return Err(mismatch());
        }
        let batches: usize = sa[..ra].iter().product();
        let y_batches: usize = sb[..rb].iter().product();
        let out = batched_gemm(
            self.value(a).data(),
            ta,
            self.value(b).data(),
            tb,
            batches,
            y_batches,
            m,
            ka,
            n,
        );
        let mut shape = sa[..ra].to_vec();
        shape.extend([m, n]);
        let rg = self.needs(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul { a, b, ta, tb }, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.matmul_t(a, b, false, false)
    }

    /// Elementwise `a + b`, with `b` broadcast onto the shape of `a`
    /// (right-aligned; each axis of `b` is 1 or matches).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let map = broadcast_map(&sa, &sb).ok_or(AutodiffError::ShapeMismatch {
            op: "add",
            left: sa.clone(),
            right: sb.clone(),
        })?;
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let out: Vec<f32> = match &map {
            None => va.iter().zip(vb).map(|(x, y)| x + y).collect(),
            Some(idx) => va.iter().zip(idx).map(|(x, &i)| x + vb[i]).collect(),
        };
        let rg = self.needs(&[a, b]);
        Ok(self.push(Tensor::new(sa, out)?, Op::Add { a, b }, rg))
    }

    /// `a - b`, composed from [`Graph::scale`] and [`Graph::add`].
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let nb = self.scale(b, -1.0);
        self.add(a, nb)
    }

    pub fn scale(&mut self, a: Var, factor: f32) -> Var {
        let t = self.value(a);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|x| x * factor).collect())
            .expect("same shape");
        let rg = self.needs(&[a]);
        self.push(out, Op::Scale { a, factor }, rg)
    }

    /// Softmax along `axis`, with max subtraction. NaN inputs propagate.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var, AutodiffError> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(AutodiffError::Axis { axis, shape });
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.value(a).data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * n + j) * inner + i;
                let max = if (0..n).any(|j| src[at(j)].is_nan()) {
                    f32::NAN
                } else {
                    (0..n).map(|j| src[at(j)]).fold(f32::NEG_INFINITY, f32::max)
                };
                let mut sum = 0.0f64;
                for j in 0..n {
                    let e = (src[at(j)] - max).exp();
                    out[at(j)] = e;
                    sum += e as f64;
                }
                let inv = (1.0 / sum) as f32;
                for j in 0..n {
                    out[at(j)] *= inv;
                }
            }
        }
        let rg = self.needs(&[a]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax { a, axis }, rg))
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f32) -> Result<Var, AutodiffError> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or(AutodiffError::Axis { axis: 0, shape: shape.clone() })?;
        for p in [gain, bias] {
            if self.shape(p) != [d] {
                return Err(AutodiffError::ShapeMismatch {
                    op: "layer_norm",
                    left: shape.clone(),
                    right: self.shape(p).to_vec(),
                });
            }
        }
        let src = self.value(x).data();
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let rows = src.len() / d.max(1);
        let mut xhat = vec![0.0; src.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; src.len()];
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mean = row.iter().map(|&v| v as f64).sum::<f64>() / d as f64;
            let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + eps as f64).sqrt();
            rstd[r] = rs as f32;
            for c in 0..d {
                let h = ((row[c] as f64 - mean) * rs) as f32;
                xhat[r * d + c] = h;
                out[r * d + c] = h * g[c] + b[c];
            }
        }
        let rg = self.needs(&[x, gain, bias]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| kernels::gelu(v)).collect())
            .expect("same shape");
        let rg = self.needs(&[a]);
        self.push(out, Op::Gelu { a }, rg)
    }

    /// Gathers rows of a `[rows, width]` table. The output has shape
    /// `out_shape ++ [width]`, where `out_shape` must hold `ids.len()` items.
    pub fn embedding(&mut self, table: Var, ids: &[usize], out_shape: &[usize]) -> Result<Var, AutodiffError> {
        let tshape = self.shape(table).to_vec();
        if tshape.len() != 2 || out_shape.iter().product::<usize>() != ids.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "embedding",
                left: tshape,
                right: out_shape.to_vec(),
            });
        }
        let (rows, width) = (tshape[0], tshape[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(AutodiffError::IndexOutOfRange { index: bad, size: rows });
        }
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * width);
        for &i in ids {
            out.extend_from_slice(&src[i * width..(i + 1) * width]);
        }
        let mut shape = out_shape.to_vec();
        shape.push(width);
        let rg = self.needs(&[table]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Same-padded 1-D convolution along the sequence axis.
    ///
    /// `x` is `[batch, seq, in]`, `weight` is `[kernel, in, out]` with odd
    /// `kernel`, `bias` is `[out]`. Positions with `keep == false` read as
    /// zeros, so padding never leaks into real tokens.
    pub fn conv1d(&mut self, x: Var, weight: Var, bias: Var, keep: Option<&[bool]>) -> Result<Var, AutodiffError> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(weight).to_vec());
        let bad = || AutodiffError::ShapeMismatch {
            op: "conv1d",
            left: sx.clone(),
            right: sw.clone(),
        };
        if sx.len() != 3 || sw.len() != 3 || sw[1] != sx[2] || sw[0] % 2 == 0 {
            return Err(bad());
        }
        if self.shape(bias) != [sw[2]] || keep.is_some_and(|k| k.len() != sx[0] * sx[1]) {
            return Err(bad());
        }
        let (batch, seq, cin) = (sx[0], sx[1], sx[2]);
        let (kernel, cout) = (sw[0], sw[2]);
        let half = kernel / 2;
        let (xs, ws, bs) = (self.value(x).data(), self.value(weight).data(), self.value(bias).data());
        let mut out = vec![0.0; batch * seq * cout];
        for b in 0..batch {
            for t in 0..seq {
                let orow = &mut out[(b * seq + t) * cout..(b * seq + t + 1) * cout];
                orow.copy_from_slice(bs);
                for kk in 0..kernel {
                    let Some(src) = (t + kk).checked_sub(half).filter(|&s| s < seq) else {
                        continue;
                    };
                    if keep.is_some_and(|k| !k[b * seq + src]) {
                        continue;
                    }
                    let xrow = &xs[(b * seq + src) * cin..(b * seq + src + 1) * cin];
                    for (c, &xv) in xrow.iter().enumerate() {
                        let wrow = &ws[(kk * cin + c) * cout..(kk * cin + c + 1) * cout];
                        for (o, w) in orow.iter_mut().zip(wrow) {
                            *o += xv * w;
                        }
                    }
                }
            }
        }
        let rg = self.needs(&[x, weight, bias]);
        Ok(self.push(
            Tensor::new(vec![batch, seq, cout], out)?,
            Op::Conv1d {
                x,
                weight,
                bias,
                keep: keep.map(<[bool]>::to_vec),
            },
            rg,
        ))
    }

    /// Inverted dropout. A rate of 0 returns `a` unchanged.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f32, rng: &mut R) -> Var {
        if rate <= 0.0 {
            return a;
        }
        let keep = 1.0 / (1.0 - rate);
        let t = self.value(a);
        let scale: Vec<f32> = (0..t.len())
            .map(|_| if rng.random::<f32>() < rate { 0.0 } else { keep })
            .collect();
        let out = Tensor::new(
            t.shape().to_vec(),
            t.data().iter().zip(&scale).map(|(v, s)| v * s).collect(),
        )
        .expect("same shape");
        let rg = self.needs(&[a]);
        self.push(out, Op::Dropout { a, scale }, rg)
    }

    /// Mean negative log-likelihood of `labels` under `logits` `[n, vocab]`,
    /// skipping [`IGNORE_INDEX`] entries.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[i64]) -> Result<Var, AutodiffError> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "cross_entropy",
                left: shape,
                right: vec![labels.len()],
            });
        }
        let vocab = shape[1];
        let src = self.value(logits).data();
        let mut probs = vec![0.0; src.len()];
        let mut total = 0.0f64;
        let mut count = 0;
        for (r, &label) in labels.iter().enumerate() {
            if label == IGNORE_INDEX {
                continue;
            }
            if label < 0 || label as usize >= vocab {
                return Err(AutodiffError::IndexOutOfRange {
                    index: label.max(0) as usize,
                    size: vocab,
                });
            }
            let row = &src[r * vocab..(r + 1) * vocab];
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
            let sum: f64 = row.iter().map(|&v| (v as f64 - max).exp()).sum();
            let lse = max + sum.ln();
            for (p, &v) in probs[r * vocab..(r + 1) * vocab].iter_mut().zip(row) {
                *p = ((v as f64 - lse).exp()) as f32;
            }
            total += lse - row[label as usize] as f64;
            count += 1;
        }
        if count == 0 {
            return Err(AutodiffError::EmptyLoss);
        }
        let rg = self.needs(&[logits]);
        Ok(self.push(
            Tensor::scalar((total / count as f64) as f32),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
                count,
            },
            rg,
        ))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var, AutodiffError> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(AutodiffError::Permutation {
                perm: perm.to_vec(),
                shape,
            });
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let out = permute_data(self.value(a).data(), &shape, perm);
        let rg = self.needs(&[a]);
        Ok(self.push(Tensor::new(out_shape, out)?, Op::Permute { a, perm: perm.to_vec() }, rg))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let r = self.shape(a).len();
        if r < 2 {
            return Err(AutodiffError::Axis {
                axis: 1,
                shape: self.shape(a).to_vec(),
            });
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(a, &perm)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let t = self.value(a).clone().reshaped(shape.to_vec())?;
        let rg = self.needs(&[a]);
        Ok(self.push(t, Op::Reshape { a }, rg))
    }

    /// Sum of all elements, composed as `1ᵀ · A · 1` over a flattened view.
    pub fn sum_all(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let n = self.value(a).len();
        let flat = self.reshape(a, &[1, n])?;
        let ones = self.constant(Tensor::full(&[n, 1], 1.0));
        let s = self.matmul(flat, ones)?;
        self.reshape(s, &[])
    }

    /// Mean squared error between two `[n, 1]` columns, composed from
    /// `sub`, `matmul` and `scale`.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var, AutodiffError> {
        let n = self.shape(pred)[0];
        if n == 0 {
            return Err(AutodiffError::EmptyLoss);
        }
        let diff = self.sub(pred, target)?;
        let sq = self.matmul_t(diff, diff, true, false)?;
        let sq = self.reshape(sq, &[])?;
        Ok(self.scale(sq, 1.0 / n as f32))
    }

    /// Runs reverse-mode differentiation from the scalar `loss`.
    ///
    /// The graph keeps the gradients until [`Graph::reset_grads`]; a second
    /// call before that is a contract error.
    pub fn backward(&mut self, loss: Var) -> Result<(), AutodiffError> {
        if self.grads.is_some() {
            return Err(AutodiffError::BackwardTwice);
        }
        if self.value(loss).len() != 1 {
            return Err(AutodiffError::NonScalarLoss {
                shape: self.shape(loss).to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(idx, &gout, &mut grads);
            grads[idx] = Some(gout);
        }
        self.grads = Some(grads);
        Ok(())
    }

    pub fn reset_grads(&mut self) {
        self.grads = None;
    }

    /// Gradient of `v` after [`Graph::backward`], if it received one.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.as_ref()?.get(v.0)?.as_ref()?;
        Some(Tensor::new(self.shape(v).to_vec(), g.clone()).expect("grad shape"))
    }

    /// Gradients of every bound parameter, in binding order. Parameters that
    /// did not influence the loss get zeros.
    pub fn param_grads(&self) -> Vec<(ParamId, Tensor)> {
        self.param_order
            .iter()
            .filter(|(_, v)| self.nodes[v.0].requires_grad)
            .map(|&(id, v)| {
                let g = self.grad(v).unwrap_or_else(|| Tensor::zeros(self.shape(v)));
                (id, g)
            })
            .collect()
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f32>>], v: Var, g: Vec<f32>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop_node(&self, idx: usize, gout: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, ta, tb } => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (ra, rb) = (sa.len() - 2, sb.len() - 2);
                let (m, k) = if *ta { (sa[ra + 1], sa[ra]) } else { (sa[ra], sa[ra + 1]) };
                let n = if *tb { sb[rb] } else { sb[rb + 1] };
                let batches: usize = sa[..ra].iter().product();
                let y_batches: usize = sb[..rb].iter().product();
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.nodes[a.0].requires_grad {
                    // dA is paired batch-for-batch with dC, B is broadcast.
                    let da = if *ta {
                        batched_gemm_pair(vb, *tb, gout, true, batches, y_batches, k, n, m, true)
                    } else {
                        batched_gemm_pair(gout, false, vb, !*tb, batches, y_batches, m, n, k, false)
                    };
                    self.accumulate(grads, *a, da);
                }
                if self.nodes[b.0].requires_grad {
                    let full = if *tb {
                        batched_gemm(gout, true, va, *ta, batches, batches, n, m, k)
                    } else {
                        batched_gemm(va, !*ta, gout, false, batches, batches, k, m, n)
                    };
                    self.accumulate(grads, *b, fold_batches(&full, batches, y_batches, k * n));
                }
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, gout.to_vec());
                if self.nodes[b.0].requires_grad {
                    let (sa, sb) = (self.shape(*a), self.shape(*b));
                    let gb = match broadcast_map(sa, sb).expect("checked in forward") {
                        None => gout.to_vec(),
                        Some(map) => {
                            let mut gb = vec![0.0; self.value(*b).len()];
                            for (g, &i) in gout.iter().zip(&map) {
                                gb[i] += g;
                            }
                            gb
                        }
                    };
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Scale { a, factor } => {
                self.accumulate(grads, *a, gout.iter().map(|g| g * factor).collect());
            }
            Op::Softmax { a, axis } => {
                let shape = node.value.shape();
                let (outer, n, inner) = split_axis(shape, *axis);
                let y = node.value.data();
                let mut ga = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * n + j) * inner + i;
                        let dotp: f32 = (0..n).map(|j| gout[at(j)] * y[at(j)]).sum();
                        for j in 0..n {
                            ga[at(j)] = y[at(j)] * (gout[at(j)] - dotp);
                        }
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let d = self.value(*gain).len();
                let rows = xhat.len() / d.max(1);
                let g = self.value(*gain).data();
                let mut dgain = vec![0.0; d];
                let mut dbias = vec![0.0; d];
                let mut dx = vec![0.0; xhat.len()];
                for r in 0..rows {
                    let go = &gout[r * d..(r + 1) * d];
                    let xh = &xhat[r * d..(r + 1) * d];
                    let mut sum_dxh = 0.0f32;
                    let mut sum_dxh_xh = 0.0f32;
                    for c in 0..d {
                        dgain[c] += go[c] * xh[c];
                        dbias[c] += go[c];
                        let dxh = go[c] * g[c];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh[c];
                    }
                    let inv_d = 1.0 / d as f32;
                    for c in 0..d {
                        let dxh = go[c] * g[c];
                        dx[r * d + c] = rstd[r] * (dxh - inv_d * sum_dxh - xh[c] * inv_d * sum_dxh_xh);
                    }
                }
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *gain, dgain);
                self.accumulate(grads, *bias, dbias);
            }
            Op::Gelu { a } => {
                let src = self.value(*a).data();
                self.accumulate(
                    grads,
                    *a,
                    src.iter().zip(gout).map(|(&v, g)| g * kernels::gelu_grad(v)).collect(),
                );
            }
            Op::Embedding { table, ids } => {
                if self.nodes[table.0].requires_grad {
                    let width = self.shape(*table)[1];
                    let mut gt = vec![0.0; self.value(*table).len()];
                    for (r, &i) in ids.iter().enumerate() {
                        for (dst, g) in gt[i * width..(i + 1) * width].iter_mut().zip(&gout[r * width..(r + 1) * width]) {
                            *dst += g;
                        }
                    }
                    self.accumulate(grads, *table, gt);
                }
            }
            Op::Conv1d { x, weight, bias, keep } => {
                let sx = self.shape(*x);
                let sw = self.shape(*weight);
                let (batch, seq, cin) = (sx[0], sx[1], sx[2]);
                let (kernel, cout) = (sw[0], sw[2]);
                let half = kernel / 2;
                let (xs, ws) = (self.value(*x).data(), self.value(*weight).data());
                let mut dx = vec![0.0; xs.len()];
                let mut dw = vec![0.0; ws.len()];
                let mut db = vec![0.0; cout];
                for b in 0..batch {
                    for t in 0..seq {
                        let go = &gout[(b * seq + t) * cout..(b * seq + t + 1) * cout];
                        for (d, g) in db.iter_mut().zip(go) {
                            *d += g;
                        }
                        for kk in 0..kernel {
                            let Some(src) = (t + kk).checked_sub(half).filter(|&s| s < seq) else {
                                continue;
                            };
                            if keep.as_ref().is_some_and(|k| !k[b * seq + src]) {
                                continue;
                            }
                            let base = (b * seq + src) * cin;
                            for c in 0..cin {
                                let woff = (kk * cin + c) * cout;
                                let wrow = &ws[woff..woff + cout];
                                dx[base + c] += wrow.iter().zip(go).map(|(w, g)| w * g).sum::<f32>();
                                let xv = xs[base + c];
                                for (dwv, g) in dw[woff..woff + cout].iter_mut().zip(go) {
                                    *dwv += xv * g;
                                }
                            }
                        }
                    }
                }
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *weight, dw);
                self.accumulate(grads, *bias, db);
            }
            Op::Dropout { a, scale } => {
                self.accumulate(grads, *a, gout.iter().zip(scale).map(|(g, s)| g * s).collect());
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
                count,
            } => {
                let vocab = self.shape(*logits)[1];
                let coef = gout[0] / *count as f32;
                let mut gl = vec![0.0; probs.len()];
                for (r, &label) in labels.iter().enumerate() {
                    if label == IGNORE_INDEX {
                        continue;
                    }
                    let row = &mut gl[r * vocab..(r + 1) * vocab];
                    for (dst, p) in row.iter_mut().zip(&probs[r * vocab..(r + 1) * vocab]) {
                        *dst = p * coef;
                    }
                    row[label as usize] -= coef;
                }
                self.accumulate(grads, *logits, gl);
            }
            Op::Permute { a, perm } => {
                let mut inverse = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inverse[p] = i;
                }
                let ga = permute_data(gout, node.value.shape(), &inverse);
                self.accumulate(grads, *a, ga);
            }
            Op::Reshape { a } => self.accumulate(grads, *a, gout.to_vec()),
        }
    }
}

/// Input-gradient kernel for batched matmul: the left operand is paired
/// per batch with `gout` while the right (`left_is_b` flips roles) is the
/// broadcast operand.
#[allow(clippy::too_many_arguments)]
fn batched_gemm_pair(
    x: &[f32],
    tx: bool,
    y: &[f32],
    ty: bool,
    batches: usize,
    b_batches: usize,
    m: usize,
    k: usize,
    n: usize,
    left_is_b: bool,
) -> Vec<f32> {
    if !left_is_b {
        return batched_gemm(x, tx, y, ty, batches, b_batches, m, k, n);
    }
    // out[t] = op(B[t % b_batches]) · op(G[t])
    let mut out = vec![0.0; batches * m * n];
    let (xs, ys) = (m * k, k * n);
    for t in 0..batches {
        let xb = t % b_batches;
        kernels::gemm(
            &x[xb * xs..(xb + 1) * xs],
            tx,
            &y[t * ys..(t + 1) * ys],
            ty,
            m,
            k,
            n,
            &mut out[t * m * n..(t + 1) * m * n],
        );
    }
    out
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// For right-aligned broadcasting of `b` onto `a`: `Some(None)` when the
/// shapes are equal, `Some(Some(map))` with a flat index into `b` for every
/// element of `a`, or `None` when incompatible.
fn broadcast_map(a: &[usize], b: &[usize]) -> Option<Option<Vec<usize>>> {
    if a == b {
        return Some(None);
    }
    if b.len() > a.len() {
        return None;
    }
    let offset = a.len() - b.len();
    let mut bstr = vec![0; a.len()];
    let bs = strides(b);
    for (i, &d) in b.iter().enumerate() {
        if d != 1 && d != a[offset + i] {
            return None;
        }
        bstr[offset + i] = if d == 1 { 0 } else { bs[i] };
    }
    let total: usize = a.iter().product();
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; a.len()];
    for _ in 0..total {
        map.push(idx.iter().zip(&bstr).map(|(i, s)| i * s).sum());
        for ax in (0..a.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < a[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    Some(Some(map))
}

fn permute_data(src: &[f32], shape: &[usize], perm: &[usize]) -> Vec<f32> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(src.len());
    if src.is_empty() {
        return out;
    }
    let rank = out_shape.len();
    if rank == 0 {
        return src.to_vec();
    }
    // Innermost axis handled as a strided run.
    let last = rank - 1;
    let (run, run_stride) = (out_shape[last], src_strides[last]);
    let mut idx = vec![0usize; rank];
    loop {
        let base: usize = idx[..last].iter().zip(&src_strides[..last]).map(|(i, s)| i * s).sum();
        out.extend((0..run).map(|j| src[base + j * run_stride]));
        let mut ax = last;
        loop {
            if ax == 0 {
                return out;
            }
            ax -= 1;
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
}
