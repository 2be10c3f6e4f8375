use serde::{Deserialize, Serialize};

use crate::network::{Gradients, Network};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// Adam over every weight and bias tensor of a network.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    states: Vec<(AdamState, AdamState)>,
}

impl Adam {
    pub fn new(net: &Network, config: AdamConfig) -> Self {
        Adam {
            config,
            states: net
                .layers()
                .iter()
                .map(|l| (AdamState::new(l.weights.len()), AdamState::new(l.bias.len())))
                .collect(),
        }
    }

    pub fn step(&mut self, net: &mut Network, grads: &Gradients) {
        for ((l, g), (sw, sb)) in net.layers_mut().iter_mut().zip(&grads.layers).zip(&mut self.states) {
            if !l.weights.is_empty() {
                adam_step(&mut l.weights, &g.weights, sw, &self.config);
            }
            if !l.bias.is_empty() {
                adam_step(&mut l.bias, &g.bias, sb, &self.config);
            }
        }
    }
}
