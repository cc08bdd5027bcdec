//! Adam with global-norm gradient clipping.

use serde::{Deserialize, Serialize};

use crate::params::{ParamGrads, ParamSet};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm ceiling; non-positive disables clipping.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: 5.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    /// First and second moments, aligned with the parameter set.
    pub moments: Vec<(Tensor<T>, Tensor<T>)>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, params: &ParamSet<T>) -> Self {
        let moments = params
            .iter()
            .map(|(_, p)| (Tensor::zeros(p.value.shape()), Tensor::zeros(p.value.shape())))
            .collect();
        Adam { config, step: 0, moments }
    }

    /// Clips `grads` then applies one update to every unfrozen parameter that
    /// has a gradient. Returns the pre-clip global norm.
    pub fn update(&mut self, params: &mut ParamSet<T>, mut grads: ParamGrads<T>) -> T {
        let c = self.config;
        let norm = if c.clip_norm > 0.0 {
            grads.clip_global_norm(T::lit(c.clip_norm))
        } else {
            grads.global_norm()
        };
        self.step += 1;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let one = T::one();
        let bc1 = one - b1.powi(self.step as i32);
        let bc2 = one - b2.powi(self.step as i32);
        let lr = T::lit(c.lr);
        let eps = T::lit(c.eps);
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            if params.is_frozen(id) {
                continue;
            }
            let Some(g) = grads.grads[id.index()].take() else { continue };
            let (m, v) = &mut self.moments[id.index()];
            let value = params.get_mut(id);
            for (((w, &gi), mi), vi) in value
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w = *w - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        norm
    }
}
