use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Parameters whose gradient slot is empty are
/// skipped entirely, so components outside the active graph stay frozen.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    pub learning_rate: f64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: Vec<u64>,
}

impl Adam {
    pub fn new(store: &ParamStore, learning_rate: f64, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self {
            config,
            learning_rate,
            first: zeros.clone(),
            second: zeros,
            steps: vec![0; store.len()],
        }
    }

    pub fn step(&mut self, store: &mut ParamStore) {
        let AdamConfig { beta1, beta2, eps } = self.config;
        let lr = self.learning_rate;
        for (i, tensor) in store.tensors_mut().enumerate() {
            let Some(grad) = tensor.grad().map(<[f64]>::to_vec) else {
                continue;
            };
            self.steps[i] += 1;
            let t = self.steps[i] as i32;
            let c1 = 1.0 - beta1.powi(t);
            let c2 = 1.0 - beta2.powi(t);
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for (k, w) in tensor.data_mut().iter_mut().enumerate() {
                let gk = grad[k];
                m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
                v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
                let update = lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
                *w -= update;
            }
        }
    }
}

/// Rescales gradients so their global L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = store.grad_norm();
    if norm > max_norm && norm.is_finite() {
        store.scale_grads(max_norm / norm);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::from_vec(vec![1.0, -2.0]));
        store.get_mut(id).accumulate_grad(&[0.5, -3.0]);
        let mut adam = Adam::new(&store, 0.1, AdamConfig::default());
        adam.step(&mut store);
        // m̂ = g and v̂ = g², so the step is lr * g / (|g| + eps).
        let w = store.get(id).data();
        assert!((w[0] - (1.0 - 0.1 * 0.5 / (0.5 + 1e-8))).abs() < 1e-15);
        assert!((w[1] - (-2.0 + 0.1 * 3.0 / (3.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::from_vec(vec![0.1, 0.2, -7.5]));
        let before = store.clone();
        let mut adam = Adam::new(&store, 0.0, AdamConfig::default());
        for _ in 0..5 {
            store.get_mut(id).accumulate_grad(&[1.0, -1.0, 1e3]);
            adam.step(&mut store);
            store.zero_grad();
        }
        assert_eq!(store.get(id).data(), before.get(id).data());
    }

    #[test]
    fn parameters_without_gradients_are_untouched() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::scalar(1.0));
        let b = store.add("b", Tensor::scalar(1.0));
        store.get_mut(a).accumulate_grad(&[1.0]);
        let mut adam = Adam::new(&store, 0.5, AdamConfig::default());
        adam.step(&mut store);
        assert_ne!(store.get(a).item(), 1.0);
        assert_eq!(store.get(b).item(), 1.0);
    }

    #[test]
    fn clipping_caps_global_norm() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::from_vec(vec![0.0, 0.0]));
        store.get_mut(a).accumulate_grad(&[3.0, 4.0]);
        assert_eq!(clip_grad_norm(&mut store, 10.0), 5.0);
        assert_eq!(store.get(a).grad().unwrap(), &[3.0, 4.0]);
        clip_grad_norm(&mut store, 1.0);
        assert!((store.grad_norm() - 1.0).abs() < 1e-15);
    }
}
