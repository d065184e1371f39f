use serde::{Deserialize, Serialize};

use super::layers::TensorKind;
use super::network::Network;
use super::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW<S> {
    pub config: AdamWConfig,
    step: u64,
    first: Vec<Vec<S>>,
    second: Vec<Vec<S>>,
}

impl<S: Scalar> AdamW<S> {
    pub fn new(config: AdamWConfig) -> Self {
        AdamW {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients currently stored in `net`.
    pub fn step(&mut self, net: &mut Network<S>) {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = S::from_f64(1.0 - c.beta1.powi(t));
        let bc2 = S::from_f64(1.0 - c.beta2.powi(t));
        let (b1, b2) = (S::from_f64(c.beta1), S::from_f64(c.beta2));
        let (lr, eps) = (S::from_f64(c.lr), S::from_f64(c.eps));
        let decay = S::one() - S::from_f64(c.lr * c.weight_decay);
        let (first, second) = (&mut self.first, &mut self.second);
        let mut idx = 0;
        net.visit_params_mut(&mut |_, kind, tensor| {
            if kind != TensorKind::Param {
                return;
            }
            if first.len() == idx {
                first.push(vec![S::zero(); tensor.len()]);
                second.push(vec![S::zero(); tensor.len()]);
            }
            let (m, v) = (&mut first[idx], &mut second[idx]);
            let (p, g) = tensor.data_and_grad_mut();
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (S::one() - b1) * g[i];
                v[i] = b2 * v[i] + (S::one() - b2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] = p[i] * decay - lr * mhat / (vhat.sqrt() + eps);
            }
            idx += 1;
        });
    }
}
