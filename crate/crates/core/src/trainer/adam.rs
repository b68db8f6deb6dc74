use serde::{Deserialize, Serialize};

use crate::encoder::ParamSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| (0.0..1.0).contains(&b);
        if !unit(self.beta1) || !unit(self.beta2) || !(self.eps > 0.0) {
            return Err(Error::Config(
                "Adam needs betas in [0, 1) and eps > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Adam with bias-corrected moments, stored flat in `ParamSet` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Steps taken so far.
    pub t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, n_params: usize) -> Self {
        Adam {
            config,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    /// One update of `params` along `grads`.
    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet, lr: f64) {
        let g = grads.flatten();
        let mut p = params.flatten();
        self.step_flat(&mut p, &g, lr);
        params.load_flat(&p);
    }

    pub fn step_flat(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        let AdamConfig { beta1, beta2, eps } = self.config;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_hand_stepped_reference() {
        let mut adam = Adam::new(AdamConfig::default(), 2);
        let mut w = [1.0, -2.0];
        let lr = 0.1;
        // reference recurrences written out per step
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let mut rw = w;
        let (mut m, mut v) = ([0.0f64; 2], [0.0f64; 2]);
        for t in 1..=3 {
            let g = [2.0 * w[0], 2.0 * w[1]];
            adam.step_flat(&mut w, &g, lr);
            for i in 0..2 {
                let gi = 2.0 * rw[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let mh = m[i] / (1.0 - b1.powi(t));
                let vh = v[i] / (1.0 - b2.powi(t));
                rw[i] -= lr * mh / (vh.sqrt() + eps);
            }
            for i in 0..2 {
                assert!((w[i] - rw[i]).abs() < 1e-12);
                assert!((adam.m[i] - m[i]).abs() < 1e-12);
                assert!((adam.v[i] - v[i]).abs() < 1e-12);
            }
        }
        // first step moves each coordinate by lr against its gradient sign
        let mut fresh = Adam::new(AdamConfig::default(), 1);
        let mut x = [3.0];
        fresh.step_flat(&mut x, &[6.0], 0.1);
        assert!((x[0] - 2.9).abs() < 1e-9);
    }

    #[test]
    fn shrinks_a_quadratic() {
        let mut adam = Adam::new(AdamConfig::default(), 2);
        let mut w = [1.0, 1.0];
        let f = |w: &[f64; 2]| w[0] * w[0] + w[1] * w[1];
        let start = f(&w);
        for _ in 0..200 {
            let g = [2.0 * w[0], 2.0 * w[1]];
            adam.step_flat(&mut w, &g, 0.05);
        }
        assert!(f(&w) <= 0.1 * start, "{}", f(&w));
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut adam = Adam::new(AdamConfig::default(), 3);
        let mut w = [0.5, -1.0, 2.0];
        adam.step_flat(&mut w, &[0.0; 3], 1.0);
        assert_eq!(w, [0.5, -1.0, 2.0]);
    }
}
