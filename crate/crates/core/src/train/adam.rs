//! Adam with bias correction and decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_eps() -> f64 {
    1e-8
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 1e-6,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidParameter("weight decay must be >= 0".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidParameter(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidParameter("eps must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, num_params: usize) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update. `decay_mask[i]` selects which parameters receive weight
    /// decay (weights yes, biases no); decay is applied directly to the
    /// parameter, not folded into the gradient.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], decay_mask: &[bool]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() || decay_mask.len() != self.m.len() {
            return Err(Error::InvalidInput(format!(
                "optimizer holds {} parameters, got {} / {} / {}",
                self.m.len(),
                params.len(),
                grad.len(),
                decay_mask.len()
            )));
        }
        self.step += 1;
        let AdamConfig {
            learning_rate: lr,
            weight_decay: wd,
            beta1: b1,
            beta2: b2,
            eps,
        } = self.config;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            let mut p = params[i];
            if decay_mask[i] {
                p -= lr * wd * p;
            }
            params[i] = p - lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        // with bias correction the first step is lr * g / (|g| + eps)
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut adam = Adam::new(cfg, 2).unwrap();
        let mut p = vec![1.0, -2.0];
        adam.step(&mut p, &[4.0, -0.5], &[true, true]).unwrap();
        assert!((p[0] - (1.0 - 1e-3 * 4.0 / (4.0 + 1e-8))).abs() < 1e-15);
        assert!((p[1] - (-2.0 + 1e-3 * 0.5 / (0.5 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let cfg = AdamConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        let mut adam = Adam::new(cfg, 3).unwrap();
        let mut p = vec![0.3, 0.2, 0.1];
        for _ in 0..5 {
            adam.step(&mut p, &[1.0, 2.0, 3.0], &[true; 3]).unwrap();
        }
        assert_eq!(p, vec![0.3, 0.2, 0.1]);
    }
}
