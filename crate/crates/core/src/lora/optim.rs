use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates for one tensor.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MomentState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl MomentState {
    pub fn zeros(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len] }
    }
}

/// Linear decay to zero: `lr0 · (1 − (t−1)/T)`, so `lr(1) = lr0` and
/// `lr(T+1) = 0`.
pub fn lr_at(lr0: f64, t: usize, total_steps: usize) -> f64 {
    assert!(t >= 1, "steps are 1-based");
    if total_steps == 0 {
        return 0.0;
    }
    lr0 * (1.0 - (t - 1) as f64 / total_steps as f64)
}

/// One bias-corrected Adam update at step `t` (1-based) with rate `lr`.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut MomentState, t: usize, lr: f64, cfg: &AdamConfig) {
    assert_eq!(params.len(), grads.len(), "parameter/gradient length mismatch");
    assert!(t >= 1, "steps are 1-based");
    if state.m.len() != params.len() {
        *state = MomentState::zeros(params.len());
    }
    let c1 = 1.0 - cfg.beta1.powi(t as i32);
    let c2 = 1.0 - cfg.beta2.powi(t as i32);
    for (i, (p, &g)) in params.iter_mut().zip(grads).enumerate() {
        let m = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        let v = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        state.m[i] = m;
        state.v[i] = v;
        *p -= lr * (m / c1) / ((v / c2).sqrt() + cfg.eps);
    }
}
