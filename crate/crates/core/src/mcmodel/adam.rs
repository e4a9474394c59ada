//! Adam optimizer with bias-corrected moment estimates.

use serde::{Deserialize, Serialize};

use crate::gradnet::{DiffTensor, GradStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, param_sizes: &[usize]) -> Self {
        Adam {
            cfg,
            t: 0,
            m: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn timestep(&self) -> u64 {
        self.t
    }

    /// One update over all parameter tensors with gradients from `grads`.
    pub fn step(&mut self, params: &mut [&mut DiffTensor], grads: &GradStore) {
        assert_eq!(params.len(), self.m.len(), "optimizer arity");
        assert_eq!(grads.bufs.len(), self.m.len(), "grad arity");
        self.t += 1;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        let lr = self.cfg.lr;
        let eps = self.cfg.eps;
        for (i, p) in params.iter_mut().enumerate() {
            let g = &grads.bufs[i];
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for (j, theta) in p.values_mut().iter_mut().enumerate() {
                let gj = g[j];
                m[j] = b1 * m[j] + (1.0 - b1) * gj;
                v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *theta -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(v: f64) -> DiffTensor {
        DiffTensor::from_values(&[1], vec![v]).unwrap()
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = AdamConfig {
            lr: 0.1,
            ..Default::default()
        };
        let mut adam = Adam::new(cfg, &[1]);
        let mut p = single(1.0);
        let grads = GradStore {
            bufs: vec![vec![0.37]],
        };
        adam.step(&mut [&mut p], &grads);
        // First step: m_hat = g, v_hat = g^2, so the move is ~lr * sign(g).
        assert!((p.values()[0] - (1.0 - 0.1)).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut adam = Adam::new(AdamConfig::default(), &[2]);
        let mut p = DiffTensor::from_values(&[2], vec![0.5, -2.0]).unwrap();
        let grads = GradStore {
            bufs: vec![vec![0.0, 0.0]],
        };
        for _ in 0..10 {
            adam.step(&mut [&mut p], &grads);
        }
        assert_eq!(p.values(), &[0.5, -2.0]);
    }

    #[test]
    fn quadratic_converges_toward_zero() {
        let cfg = AdamConfig {
            lr: 0.1,
            ..Default::default()
        };
        let mut adam = Adam::new(cfg, &[1]);
        let mut p = single(1.0);
        for _ in 0..200 {
            let g = 2.0 * p.values()[0]; // d/dx x^2
            let grads = GradStore {
                bufs: vec![vec![g]],
            };
            adam.step(&mut [&mut p], &grads);
        }
        assert!(
            p.values()[0].abs() < 0.05,
            "theta after 200 steps: {}",
            p.values()[0]
        );
    }
}
