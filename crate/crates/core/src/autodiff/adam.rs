use std::collections::BTreeMap;

use super::params::ParameterStore;
use super::tensor::Real;
use super::AutodiffError;

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Moment estimates for every trainable parameter.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    config: AdamConfig,
    step_count: u64,
    first: BTreeMap<String, Vec<T>>,
    second: BTreeMap<String, Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step_count: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One bias-corrected Adam update of every trainable parameter, then
    /// clears all gradients.
    pub fn step(&mut self, store: &mut ParameterStore<T>) -> Result<(), AutodiffError> {
        let names = store.trainable_names();
        if let Some(missing) = names.iter().find(|n| store.grad(n).is_none()) {
            return Err(AutodiffError::MissingGradient(missing.clone()));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let (b1, b2) = (T::lit(beta1), T::lit(beta2));
        let correct1 = T::lit(1.0 - beta1.powi(t));
        let correct2 = T::lit(1.0 - beta2.powi(t));
        let lr = T::lit(lr);
        let eps = T::lit(epsilon);
        for name in &names {
            let grad = store.grad(name).expect("checked above").to_vec();
            let m = self
                .first
                .entry(name.clone())
                .or_insert_with(|| vec![T::zero(); grad.len()]);
            let v = self
                .second
                .entry(name.clone())
                .or_insert_with(|| vec![T::zero(); grad.len()]);
            let value = store.value_mut(name).expect("trainable name").values_mut();
            for i in 0..grad.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + (T::one() - b1) * g;
                v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                let m_hat = m[i] / correct1;
                let v_hat = v[i] / correct2;
                value[i] = value[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        store.zero_grad();
        Ok(())
    }
}
