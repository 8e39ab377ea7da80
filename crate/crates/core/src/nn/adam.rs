use ndarray::Zip;
use serde::{Deserialize, Serialize};

use super::param::Param;
use crate::scalar::Scalar;

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

/// Adam with bias correction. Call [`Adam::begin_step`] once per batch, then
/// [`Adam::update`] on every parameter. Each parameter counts its own steps,
/// so parameters that start training late get a fresh bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    /// Multiplier applied to accumulated gradients (e.g. `1 / batch`).
    grad_scale: T,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            grad_scale: T::one(),
        }
    }

    pub fn begin_step(&mut self, grad_scale: T) {
        self.step += 1;
        self.grad_scale = grad_scale;
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn grad_scale(&self) -> T {
        self.grad_scale
    }

    /// Bias-corrected step size for a parameter's `t`-th update.
    pub fn step_size(&self, t: u64) -> f64 {
        let t = t.max(1) as i32;
        let c = &self.config;
        c.lr * (1.0 - c.beta2.powi(t)).sqrt() / (1.0 - c.beta1.powi(t))
    }

    /// Applies one update to `p` and clears its gradient. Frozen parameters
    /// only have their gradient cleared.
    pub fn update(&self, p: &mut Param<T>) {
        if p.frozen {
            p.zero_grad();
            return;
        }
        let (b1, b2) = (T::lit(self.config.beta1), T::lit(self.config.beta2));
        let one = T::one();
        let eps = T::lit(self.config.eps);
        p.steps += 1;
        let alpha = T::lit(self.step_size(p.steps));
        let eps_hat = eps * T::lit((1.0 - self.config.beta2.powi(p.steps as i32)).sqrt());
        let scale = self.grad_scale;
        let (m, v) = p
            .moments
            .get_or_insert_with(|| (ndarray::Array2::zeros(p.value.raw_dim()), ndarray::Array2::zeros(p.value.raw_dim())));
        Zip::from(&mut p.value)
            .and(&mut p.grad)
            .and(m)
            .and(v)
            .for_each(|w, g, m, v| {
                let gs = *g * scale;
                *m = b1 * *m + (one - b1) * gs;
                *v = b2 * *v + (one - b2) * gs * gs;
                *w -= alpha * *m / (v.sqrt() + eps_hat);
                *g = T::zero();
            });
    }
}
