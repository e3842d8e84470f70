use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.0005,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros = || store.iter().map(|(_, t)| Tensor::zeros(t.rows(), t.cols())).collect();
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor]) {
        assert_eq!(grads.len(), store.len(), "one gradient per parameter");
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        let ids: Vec<_> = store.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let g = grads[k].data();
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            let p = store.get_mut(id).data_mut();
            for j in 0..p.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                p[j] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::norm_sq).sum::<f64>().sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        for g in grads.iter_mut() {
            g.scale_in_place(k);
        }
    }
    norm
}
