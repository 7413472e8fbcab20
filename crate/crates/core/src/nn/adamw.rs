use serde::{Deserialize, Serialize};

use super::dense::{DenseNet, NetGrads};

/// AdamW hyperparameters. Defaults follow the common library defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// One AdamW update of `params` in place. `step` is the 1-based step index
/// used for bias correction.
///
/// ```text
/// θ ← θ (1 - lr·wd)
/// m ← β1 m + (1 - β1) g
/// v ← β2 v + (1 - β2) g²
/// θ ← θ - lr · (m / (1 - β1^t)) / (sqrt(v / (1 - β2^t)) + ε)
/// ```
pub fn adamw_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    cfg: &AdamWConfig,
) {
    assert!(params.len() == grads.len() && m.len() == params.len() && v.len() == params.len());
    let t = step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let decay = 1.0 - cfg.learning_rate * cfg.weight_decay;
    for i in 0..params.len() {
        let g = grads[i];
        params[i] *= decay;
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}

/// Moment estimates for every parameter of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl OptimizerState {
    pub fn new(net: &DenseNet, config: AdamWConfig) -> Self {
        let n = net.param_count();
        OptimizerState {
            config,
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    /// Apply one update to `net` from `grads`.
    pub fn step(&mut self, net: &mut DenseNet, grads: &NetGrads) {
        assert_eq!(self.m.len(), net.param_count(), "optimizer state does not match network");
        self.step += 1;
        let mut offset = 0;
        for (p, g) in net.param_slices_mut().zip(grads.slices()) {
            let n = p.len();
            adamw_update(
                p,
                g,
                &mut self.m[offset..offset + n],
                &mut self.v[offset..offset + n],
                self.step,
                &self.config,
            );
            offset += n;
        }
    }
}
