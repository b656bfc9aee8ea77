use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Optimizer steps over which the rate decays from `lr` to `lr / 10`.
    pub horizon: u64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.01,
            horizon: 10_000,
        }
    }
}

impl AdamWConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }

    /// Cosine schedule; held at `lr / 10` past the horizon.
    pub fn lr_at(&self, step: u64) -> f64 {
        let floor = self.lr / 10.0;
        if self.horizon == 0 || step >= self.horizon {
            return floor;
        }
        let progress = step as f64 / self.horizon as f64;
        floor + 0.5 * (self.lr - floor) * (1.0 + (PI * progress).cos())
    }
}

/// Adam moments with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub cfg: AdamWConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl OptimState {
    pub fn new(cfg: AdamWConfig, num_params: usize) -> Self {
        Self {
            cfg,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
        }
    }

    pub fn current_lr(&self) -> f64 {
        self.cfg.lr_at(self.step)
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::DimensionMismatch {
                context: "optimizer state",
                expected: self.m.len(),
                actual: params.len().max(grads.len()),
            });
        }
        let lr = self.current_lr();
        self.step += 1;
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g;
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr * (c.weight_decay * params[i] + mhat / (vhat.sqrt() + c.eps));
        }
        Ok(())
    }
}

/// Scales `grads` so its Euclidean norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm(grads: &mut [&mut [f64]], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        let c = AdamWConfig {
            lr: 5e-4,
            horizon: 1000,
            ..AdamWConfig::default()
        };
        assert_eq!(c.lr_at(0), 5e-4);
        assert_eq!(c.lr_at(1000), 5e-4 / 10.0);
        assert_eq!(c.lr_at(5000), 5e-4 / 10.0);
        let mid = c.lr_at(500);
        assert!((mid - 0.5 * (5e-4 + 5e-5)).abs() < 1e-18);
        let mut last = f64::INFINITY;
        for s in 0..=1000 {
            let lr = c.lr_at(s);
            assert!(lr <= last);
            last = lr;
        }
    }

    #[test]
    fn zero_lr_is_a_null_step() {
        let mut o = OptimState::new(AdamWConfig::with_lr(0.0), 3);
        let mut p = vec![1.0, -2.0, 3.0];
        o.update(&mut p, &[0.5, 0.5, -1.0]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let cfg = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        let mut o = OptimState::new(cfg, 2);
        let mut p = vec![0.0, 0.0];
        o.update(&mut p, &[3.0, -0.01]).unwrap();
        assert!((p[0] + 0.1).abs() < 1e-8 && (p[1] - 0.1).abs() < 1e-6);
    }

    #[test]
    fn weight_decay_is_decoupled() {
        let cfg = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.5,
            ..AdamWConfig::default()
        };
        let mut o = OptimState::new(cfg, 1);
        let mut p = vec![2.0];
        o.update(&mut p, &[0.0]).unwrap();
        assert!((p[0] - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn grad_clipping() {
        let mut a = vec![3.0, 0.0];
        let mut b = vec![4.0];
        let n = clip_grad_norm(&mut [&mut a, &mut b], 1.0);
        assert_eq!(n, 5.0);
        assert!((a[0] - 0.6).abs() < 1e-15 && (b[0] - 0.8).abs() < 1e-15);
    }
}
