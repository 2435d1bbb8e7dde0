//! Central finite-difference oracle for whole-model gradients.
//!
//! Perturbations are applied to an f64 copy of the parameters and the loss
//! is evaluated by the f64 reference in `oracle`, so the numeric side is
//! free of single-precision rounding.

use lusoforge::autodiff::{ParamId, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracle::Params64;

pub const STEP: f64 = 1e-3;
pub const REL_TOL: f64 = 1e-2;
pub const ABS_FLOOR: f64 = 1e-6;

#[derive(Debug)]
pub struct Check {
    pub param: String,
    pub analytic: f64,
    pub numeric: f64,
}

impl Check {
    pub fn passes(&self) -> bool {
        (self.analytic - self.numeric).abs() <= REL_TOL * self.analytic.abs().max(self.numeric.abs()) + ABS_FLOOR
    }
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        v
    } else {
        v.into_iter().map(|x| x / n).collect()
    }
}

/// For every parameter tensor, compares the directional derivative along
/// `directions` unit vectors (each half gradient-aligned, half random) with
/// `(L(θ+hu) − L(θ−hu)) / 2h`.
pub fn check_params(
    params: &ParamStore,
    base: &Params64,
    grads: &[(ParamId, Tensor)],
    directions: usize,
    seed: u64,
    loss: impl Fn(&Params64) -> f64,
) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (id, grad) in grads {
        let name = params.name(*id);
        let g: Vec<f64> = grad.data().iter().map(|&v| v as f64).collect();
        let g_unit = unit(g.clone());
        for _ in 0..directions {
            let r = unit((0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect());
            let dir = unit(g_unit.iter().zip(&r).map(|(a, b)| a + b).collect());
            let analytic: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
            let shifted = |sign: f64| {
                let mut p = base.clone();
                let t = &mut p.get_mut(name).expect("parameter present").1;
                for (x, d) in t.iter_mut().zip(&dir) {
                    *x += sign * STEP * d;
                }
                loss(&p)
            };
            let numeric = (shifted(1.0) - shifted(-1.0)) / (2.0 * STEP);
            out.push(Check {
                param: name.to_string(),
                analytic,
                numeric,
            });
        }
    }
    out
}
