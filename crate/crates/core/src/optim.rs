//! Adam with decoupled weight decay.

use alloc::vec;
use alloc::vec::Vec;

use crate::config::AdamSettings;
use crate::math::sqrt;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub weight_decay: f64,
    pub settings: AdamSettings,
    step: u64,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl Adam {
    pub fn new(num_params: usize, lr: f64, weight_decay: f64, settings: AdamSettings) -> Self {
        Adam { lr, weight_decay, settings, step: 0, first: vec![0.0; num_params], second: vec![0.0; num_params] }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.first.len());
        assert_eq!(grad.len(), self.first.len());
        self.step += 1;
        let AdamSettings { beta1, beta2, eps } = self.settings;
        let bias1 = 1.0 - libm::pow(beta1, self.step as f64);
        let bias2 = 1.0 - libm::pow(beta2, self.step as f64);
        let decay = 1.0 - self.lr * self.weight_decay;
        for i in 0..params.len() {
            let g = grad[i];
            self.first[i] = beta1 * self.first[i] + (1.0 - beta1) * g;
            self.second[i] = beta2 * self.second[i] + (1.0 - beta2) * g * g;
            let m_hat = self.first[i] / bias1;
            let v_hat = self.second[i] / bias2;
            params[i] = params[i] * decay - self.lr * m_hat / (sqrt(v_hat) + eps);
        }
    }
}
