use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::param::Param;

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub steps: u64,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            steps: 0,
            moments: Vec::new(),
        }
    }

    /// One update over `params`, which must come in the same order on
    /// every call.
    pub fn step(&mut self, params: &mut [&mut Param]) {
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| (alloc::vec![0.0; p.len()], alloc::vec![0.0; p.len()]))
                .collect();
        }
        self.steps += 1;
        let t = self.steps as i32;
        let bc1 = 1.0 - libm::pow(self.beta1, f64::from(t));
        let bc2 = 1.0 - libm::pow(self.beta2, f64::from(t));
        let step_size = self.lr / bc1;
        for (p, (m, v)) in params.iter_mut().zip(&mut self.moments) {
            for i in 0..p.value.len() {
                let g = p.grad[i];
                p.value[i] *= 1.0 - self.lr * self.weight_decay;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let denom = libm::sqrt(v[i] / bc2) + self.eps;
                p.value[i] -= step_size * m[i] / denom;
            }
        }
    }
}
