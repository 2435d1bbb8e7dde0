use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap()
}

/// Finite-difference oracle: compares directional derivatives of
/// `L = Σ r ⊙ f(inputs)` along random directions with the analytic gradient.
/// The loss for the difference quotient is accumulated in f64 outside the
/// graph.
fn grad_check(inputs: Vec<Tensor>, build: impl Fn(&mut Graph, &[Var]) -> Var) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let eval = |ins: &[Tensor]| -> Tensor {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.constant(t.clone())).collect();
        let out = build(&mut g, &vars);
        g.value(out).clone()
    };
    let base = eval(&inputs);
    let weights = rand_tensor(&mut rng, base.shape());

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = build(&mut g, &vars);
    let n = g.value(out).len();
    let flat = g.reshape(out, &[1, n]).unwrap();
    let w = g.constant(weights.clone().reshaped(vec![n, 1]).unwrap());
    let loss = g.matmul(flat, w).unwrap();
    let loss = g.reshape(loss, &[]).unwrap();
    g.backward(loss).unwrap();

    let h = 1e-3f32;
    let objective = |t: &Tensor| -> f64 {
        t.data()
            .iter()
            .zip(weights.data())
            .map(|(a, b)| *a as f64 * *b as f64)
            .sum()
    };
    for (i, v) in vars.iter().enumerate() {
        let grad = g.grad(*v).expect("input gradient");
        for _ in 0..3 {
            let dir = rand_tensor(&mut rng, inputs[i].shape());
            let analytic: f64 = grad.data().iter().zip(dir.data()).map(|(a, b)| *a as f64 * *b as f64).sum();
            let shifted = |sign: f32| {
                let mut ins = inputs.clone();
                ins[i]
                    .data_mut()
                    .iter_mut()
                    .zip(dir.data())
                    .for_each(|(x, d)| *x += sign * h * d);
                objective(&eval(&ins))
            };
            let numeric = (shifted(1.0) - shifted(-1.0)) / (2.0 * h as f64);
            let tol = 1e-2 * analytic.abs().max(numeric.abs()) + 1e-6;
            assert!(
                (analytic - numeric).abs() <= tol,
                "input {i}: analytic {analytic} vs numeric {numeric}"
            );
        }
    }
}

#[test]
fn matmul_identity_and_zero() {
    let mut g = Graph::new();
    let eye = g.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]));
    let b = g.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
    let c = g.matmul(eye, b).unwrap();
    assert_eq!(g.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);
    let z = g.constant(Tensor::zeros(&[2, 2]));
    let c = g.matmul(z, b).unwrap();
    assert_eq!(g.value(c).data(), &[0.0; 4]);
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = rand_tensor(&mut rng, &[5, 4]);
    let b = rand_tensor(&mut rng, &[4, 3]);
    let mut g = Graph::new();
    let (va, vb) = (g.constant(a.clone()), g.constant(b.clone()));
    let c = g.matmul(va, vb).unwrap();
    for i in 0..5 {
        for j in 0..3 {
            let mut want = 0.0f64;
            for k in 0..4 {
                want += a.data()[i * 4 + k] as f64 * b.data()[k * 3 + j] as f64;
            }
            assert!((g.value(c).data()[i * 3 + j] as f64 - want).abs() < 1e-6);
        }
    }
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    let err = g.matmul(a, b).unwrap_err().to_string();
    assert!(err.contains("[2, 3] and [2, 3]"), "{err}");
}

#[test]
fn softmax_examples() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![3], vec![0.0; 3]).unwrap());
    let y = g.softmax(x, 0).unwrap();
    for v in g.value(y).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-7);
    }
    let x = g.constant(Tensor::new(vec![2], vec![1000.0, 0.0]).unwrap());
    let y = g.softmax(x, 0).unwrap();
    assert!((g.value(y).data()[0] - 1.0).abs() < 1e-7);
    assert!(g.value(y).data()[1].abs() < 1e-7);

    let x = g.constant(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
    let y = g.softmax(x, 0).unwrap();
    let denom: f64 = (1..=3).map(|v| (v as f64).exp()).sum();
    for (i, v) in g.value(y).data().iter().enumerate() {
        assert!((*v as f64 - ((i + 1) as f64).exp() / denom).abs() < 1e-7);
    }
}

#[test]
fn softmax_rows_sum_to_one_on_any_axis() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let t = rand_tensor(&mut rng, &[3, 4, 5]);
    let mut g = Graph::new();
    let x = g.constant(t);
    for axis in 0..3 {
        let y = g.softmax(x, axis).unwrap();
        let shape = g.shape(y).to_vec();
        let s = tensor::strides(&shape);
        let data = g.value(y).data();
        let total: usize = shape.iter().product();
        for flat in 0..total {
            if !(flat / s[axis]).is_multiple_of(shape[axis]) {
                continue;
            }
            let sum: f32 = (0..shape[axis]).map(|j| data[flat + j * s[axis]]).sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn softmax_propagates_nan() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![3], vec![1.0, f32::NAN, 0.0]).unwrap());
    let y = g.softmax(x, 0).unwrap();
    assert!(g.value(y).data().iter().all(|v| v.is_nan()));
}

#[test]
fn layer_norm_of_constant_is_bias() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::full(&[2, 4], 3.5));
    let gain = g.constant(Tensor::new(vec![4], vec![2.0, -1.0, 0.5, 7.0]).unwrap());
    let bias = g.constant(Tensor::new(vec![4], vec![0.1, 0.2, 0.3, 0.4]).unwrap());
    let y = g.layer_norm(x, gain, bias, 1e-7).unwrap();
    assert_eq!(g.value(y).data(), &[0.1, 0.2, 0.3, 0.4, 0.1, 0.2, 0.3, 0.4]);
}

/// erf by its Maclaurin series in f64, independent of libm.
fn erf_series(x: f64) -> f64 {
    let mut term = x;
    let mut sum = x;
    for n in 1..200 {
        term *= -x * x / n as f64;
        let add = term / (2 * n + 1) as f64;
        sum += add;
        if add.abs() < 1e-18 {
            break;
        }
    }
    2.0 / std::f64::consts::PI.sqrt() * sum
}

#[test]
fn gelu_matches_series_reference() {
    let mut g = Graph::new();
    let zero = g.constant(Tensor::scalar(0.0));
    let y = g.gelu(zero);
    assert_eq!(g.value(y).item(), 0.0);
    for i in 0..=600 {
        let x = -3.0 + i as f64 * 0.01;
        let want = 0.5 * x * (1.0 + erf_series(x / std::f64::consts::SQRT_2));
        assert!((kernels::gelu(x as f32) as f64 - want).abs() < 1e-5, "x={x}");
    }
}

#[test]
fn cross_entropy_uniform_is_log_vocab() {
    let mut g = Graph::new();
    let logits = g.constant(Tensor::full(&[3, 50], 0.25));
    let loss = g.cross_entropy(logits, &[4, IGNORE_INDEX, 49]).unwrap();
    assert!((g.value(loss).item() - (50f32).ln()).abs() < 1e-6);
}

#[test]
fn cross_entropy_all_ignored_is_an_error() {
    let mut g = Graph::new();
    let logits = g.constant(Tensor::zeros(&[2, 5]));
    assert_eq!(
        g.cross_entropy(logits, &[IGNORE_INDEX, IGNORE_INDEX]).unwrap_err(),
        AutodiffError::EmptyLoss
    );
}

#[test]
fn cross_entropy_is_nonnegative() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let mut g = Graph::new();
        let logits = g.constant(rand_tensor(&mut rng, &[4, 7]).reshaped(vec![4, 7]).unwrap());
        let labels: Vec<i64> = (0..4).map(|_| rng.random_range(0..7)).collect();
        let l = g.cross_entropy(logits, &labels).unwrap();
        assert!(g.value(l).item() >= 0.0);
    }
}

#[test]
fn backward_sum_gives_ones() {
    let mut g = Graph::new();
    let w = g.variable(Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap());
    let s = g.sum_all(w).unwrap();
    assert_eq!(g.value(s).item(), 11.5);
    g.backward(s).unwrap();
    assert_eq!(g.grad(w).unwrap().data(), &[1.0; 6]);
}

#[test]
fn backward_product_rule() {
    let mut g = Graph::new();
    let x = g.variable(Tensor::new(vec![1, 1], vec![2.0]).unwrap());
    let y = g.variable(Tensor::new(vec![1, 1], vec![3.0]).unwrap());
    let p = g.matmul(x, y).unwrap();
    let p = g.reshape(p, &[]).unwrap();
    g.backward(p).unwrap();
    assert_eq!(g.grad(x).unwrap().item(), 3.0);
    assert_eq!(g.grad(y).unwrap().item(), 2.0);
}

#[test]
fn backward_contract_errors() {
    let mut g = Graph::new();
    let w = g.variable(Tensor::zeros(&[2]));
    assert!(matches!(g.backward(w), Err(AutodiffError::NonScalarLoss { .. })));
    let s = g.sum_all(w).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.backward(s), Err(AutodiffError::BackwardTwice));
    g.reset_grads();
    g.backward(s).unwrap();
}

#[test]
fn dropout_scales_kept_units() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut g = Graph::new();
    let x = g.constant(Tensor::full(&[10_000], 1.0));
    let y = g.dropout(x, 0.25, &mut rng);
    let vals = g.value(y).data();
    assert!(vals.iter().all(|&v| v == 0.0 || (v - 4.0 / 3.0).abs() < 1e-6));
    let mean: f32 = vals.iter().sum::<f32>() / vals.len() as f32;
    assert!((mean - 1.0).abs() < 0.03);
    let same = g.dropout(x, 0.0, &mut rng);
    assert_eq!(same, x);
}

#[test]
fn grad_check_matmul_variants() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
        let sa = if ta { [2, 4, 3] } else { [2, 3, 4] };
        let sb = if tb { [5, 4] } else { [4, 5] };
        grad_check(vec![rand_tensor(&mut rng, &sa), rand_tensor(&mut rng, &sb)], |g, v| {
            g.matmul_t(v[0], v[1], ta, tb).unwrap()
        });
    }
    // Partially broadcast right operand.
    grad_check(
        vec![rand_tensor(&mut rng, &[2, 3, 2, 4]), rand_tensor(&mut rng, &[3, 5, 4])],
        |g, v| g.matmul_t(v[0], v[1], false, true).unwrap(),
    );
}

#[test]
fn grad_check_elementwise_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    grad_check(
        vec![rand_tensor(&mut rng, &[2, 3, 4]), rand_tensor(&mut rng, &[3, 1])],
        |g, v| g.add(v[0], v[1]).unwrap(),
    );
    grad_check(vec![rand_tensor(&mut rng, &[3, 4])], |g, v| g.scale(v[0], -2.5));
    grad_check(vec![rand_tensor(&mut rng, &[3, 4])], |g, v| g.gelu(v[0]));
    grad_check(vec![rand_tensor(&mut rng, &[3, 4])], |g, v| g.softmax(v[0], 1).unwrap());
    grad_check(vec![rand_tensor(&mut rng, &[3, 4, 2])], |g, v| g.softmax(v[0], 1).unwrap());
}

#[test]
fn grad_check_layer_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    grad_check(
        vec![
            rand_tensor(&mut rng, &[3, 6]),
            rand_tensor(&mut rng, &[6]),
            rand_tensor(&mut rng, &[6]),
        ],
        |g, v| g.layer_norm(v[0], v[1], v[2], 1e-7).unwrap(),
    );
}

#[test]
fn grad_check_structural_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    grad_check(vec![rand_tensor(&mut rng, &[5, 3])], |g, v| {
        g.embedding(v[0], &[4, 0, 4, 2], &[2, 2]).unwrap()
    });
    grad_check(vec![rand_tensor(&mut rng, &[2, 3, 4])], |g, v| {
        g.permute(v[0], &[2, 0, 1]).unwrap()
    });
    grad_check(vec![rand_tensor(&mut rng, &[2, 3, 4])], |g, v| {
        g.reshape(v[0], &[6, 4]).unwrap()
    });
}

#[test]
fn grad_check_conv1d_with_padding_mask() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let keep = vec![true, true, true, false, true, true, true, true];
    grad_check(
        vec![
            rand_tensor(&mut rng, &[2, 4, 3]),
            rand_tensor(&mut rng, &[3, 3, 5]),
            rand_tensor(&mut rng, &[5]),
        ],
        move |g, v| g.conv1d(v[0], v[1], v[2], Some(&keep)).unwrap(),
    );
}

#[test]
fn grad_check_cross_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    grad_check(vec![rand_tensor(&mut rng, &[4, 6])], |g, v| {
        g.cross_entropy(v[0], &[1, IGNORE_INDEX, 5, 0]).unwrap()
    });
    grad_check(
        vec![rand_tensor(&mut rng, &[5, 1]), rand_tensor(&mut rng, &[5, 1])],
        |g, v| g.mse(v[0], v[1]).unwrap(),
    );
}

#[test]
fn conv_masked_positions_do_not_leak() {
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    let w = rand_tensor(&mut rng, &[3, 2, 2]);
    let b = rand_tensor(&mut rng, &[2]);
    let mut x = rand_tensor(&mut rng, &[1, 3, 2]);
    let keep = [true, true, false];
    let run = |x: &Tensor| {
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
        let y = g.conv1d(xv, wv, bv, Some(&keep)).unwrap();
        g.value(y).data()[..4].to_vec()
    };
    let before = run(&x);
    x.data_mut()[4] = 100.0;
    assert_eq!(before, run(&x));
}

#[test]
fn optimizer_is_deterministic_over_ten_steps() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut store = ParamStore::new();
        let id = store.insert("w", rand_tensor(&mut rng, &[4, 3])).unwrap();
        let x = rand_tensor(&mut rng, &[5, 4]);
        let mut opt = OptimizerState::new(&store, AdamConfig::default());
        for _ in 0..10 {
            let mut g = Graph::new();
            let w = g.param(&store, id);
            let xv = g.constant(x.clone());
            let y = g.matmul(xv, w).unwrap();
            let y = g.gelu(y);
            let loss = g.sum_all(y).unwrap();
            g.backward(loss).unwrap();
            opt.step(&mut store, &g.param_grads(), 1e-2).unwrap();
        }
        store.get(id).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}
