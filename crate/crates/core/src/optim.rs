//! Adam with decoupled weight decay.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::float;
use crate::matrix::Matrix;
use crate::tensor::ParamStore;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OptimError {
    #[error("parameter `{0}` has no gradient; run backward first")]
    MissingGradient(alloc::string::String),
    #[error("optimizer state does not match the parameter store")]
    StateMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0005,
        }
    }
}

/// Moment estimates for every parameter of one [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl AdamState {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros = || {
            store
                .ids()
                .map(|id| {
                    let (r, c) = store.value(id).shape();
                    Matrix::zeros(r, c)
                })
                .collect::<Vec<_>>()
        };
        Self {
            config,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    /// One Adam update of every parameter, then clears the gradients.
    ///
    /// Weight decay is applied directly to the parameters as
    /// `θ -= lr · weight_decay · θ`, separately from the adaptive step.
    /// Every parameter must have a gradient.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<(), OptimError> {
        if store.len() != self.first.len() {
            return Err(OptimError::StateMismatch);
        }
        if let Some(id) = store.ids().find(|&id| store.grad(id).is_none()) {
            return Err(OptimError::MissingGradient(store.name(id).into()));
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let t = self.step as f64;
        let bc1 = 1.0 - float::powf(beta1, t);
        let bc2 = 1.0 - float::powf(beta2, t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let g = store.grad(id).expect("checked above").clone();
            let m = &mut self.first[id.0];
            let v = &mut self.second[id.0];
            let theta = store.value_mut(id).as_mut_slice();
            for (k, gk) in g.as_slice().iter().enumerate() {
                let mk = &mut m.as_mut_slice()[k];
                let vk = &mut v.as_mut_slice()[k];
                *mk = beta1 * *mk + (1.0 - beta1) * gk;
                *vk = beta2 * *vk + (1.0 - beta2) * gk * gk;
                let mhat = *mk / bc1;
                let vhat = *vk / bc2;
                theta[k] -= lr * weight_decay * theta[k];
                theta[k] -= lr * mhat / (float::sqrt(vhat) + eps);
            }
        }
        store.zero_grads();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    fn store_with_grad(theta: f64, grad: f64) -> (ParamStore, crate::tensor::ParamId) {
        let mut store = ParamStore::new();
        let id = store.insert("theta", Matrix::filled(1, 1, theta));
        let mut t = Tape::new();
        let th = t.param(&store, id);
        let y = t.scale(th, grad).unwrap();
        let l = t.sum(y).unwrap();
        t.backward(l, &mut store).unwrap();
        (store, id)
    }

    #[test]
    fn defaults() {
        let c = AdamConfig::default();
        assert_eq!((c.lr, c.weight_decay), (0.01, 0.0005));
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let (mut store, id) = store_with_grad(1.5, 0.0);
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        AdamState::new(cfg, &store).step(&mut store).unwrap();
        assert_eq!(store.value(id).get(0, 0), 1.5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m = 0.1, v = 0.001; bias-corrected mhat = 1, vhat = 1 -> Δ = lr / (1 + eps)
        let (mut store, id) = store_with_grad(0.0, 1.0);
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        AdamState::new(cfg, &store).step(&mut store).unwrap();
        let expected = -0.01 / (1.0 + 1e-8);
        assert!((store.value(id).get(0, 0) - expected).abs() < 1e-15);
        assert!(store.grad(id).is_none());
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let (mut store, id) = store_with_grad(0.7, 3.0);
        let cfg = AdamConfig {
            lr: 0.0,
            ..AdamConfig::default()
        };
        AdamState::new(cfg, &store).step(&mut store).unwrap();
        assert_eq!(store.value(id).get(0, 0), 0.7);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut store = ParamStore::new();
        store.insert("w", Matrix::zeros(1, 1));
        let mut st = AdamState::new(AdamConfig::default(), &store);
        assert!(matches!(st.step(&mut store), Err(OptimError::MissingGradient(_))));
    }
}
