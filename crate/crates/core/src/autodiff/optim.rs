use serde::{Deserialize, Serialize};

use super::{AutodiffError, ParamId, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    /// Decoupled weight decay, applied to matrices only (rank ≥ 2).
    pub weight_decay: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-6,
            weight_decay: 0.01,
        }
    }
}

/// Adam moments for every parameter of a store.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
}

impl OptimizerState {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        let zeros = || params.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        Self {
            config,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One AdamW update with bias-corrected moments.
    ///
    /// Every gradient is validated before any parameter is touched, so a NaN
    /// leaves both the parameters and the moments untouched.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[(ParamId, Tensor)], lr: f32) -> Result<(), AutodiffError> {
        if !(lr.is_finite() && lr >= 0.0) {
            return Err(AutodiffError::InvalidLearningRate(lr));
        }
        for (id, g) in grads {
            if g.shape() != params.get(*id).shape() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "optimizer_step",
                    left: params.get(*id).shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
            if g.data().iter().any(|v| !v.is_finite()) {
                return Err(AutodiffError::NonFiniteGradient {
                    param: params.name(*id).to_string(),
                });
            }
        }
        self.step += 1;
        let AdamConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - (beta1 as f64).powi(t);
        let bc2 = 1.0 - (beta2 as f64).powi(t);
        for (id, g) in grads {
            let decay = if params.get(*id).rank() >= 2 { weight_decay } else { 0.0 };
            let m = &mut self.first[id.0];
            let v = &mut self.second[id.0];
            let p = params.get_mut(*id).data_mut();
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let mhat = m[i] as f64 / bc1;
                let vhat = v[i] as f64 / bc2;
                let update = mhat / (vhat.sqrt() + eps as f64);
                p[i] -= lr * (update as f32 + decay * p[i]);
            }
        }
        Ok(())
    }
}
