use crate::error::{Result, TensorError};
use crate::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

/// One bias-corrected Adam update of `values` in place. `step` is 1-based.
pub fn adam_update(
    values: &mut [f64],
    grad: &[f64],
    first: &mut [f64],
    second: &mut [f64],
    step: u64,
    cfg: &AdamConfig,
) {
    let c1 = 1.0 - cfg.beta1.powi(step as i32);
    let c2 = 1.0 - cfg.beta2.powi(step as i32);
    for i in 0..values.len() {
        let g = grad[i];
        first[i] = cfg.beta1 * first[i] + (1.0 - cfg.beta1) * g;
        second[i] = cfg.beta2 * second[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = first[i] / c1;
        let v_hat = second[i] / c2;
        values[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}

/// Adam moments for every parameter of one [`ParamStore`].
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step_count: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros = || store.iter().map(|(_, p)| vec![0.0; p.value.numel()]).collect();
        Self {
            config,
            step_count: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one update using the gradients accumulated in `store`.
    /// Frozen parameters are left untouched.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if store.len() != self.first.len() {
            return Err(TensorError::InvalidShape {
                op: "adam_step",
                reason: format!(
                    "optimizer tracks {} parameters, store has {}",
                    self.first.len(),
                    store.len()
                ),
            });
        }
        for (i, p) in store.iter_mut().enumerate() {
            if p.value.numel() != self.first[i].len() {
                return Err(TensorError::ShapeMismatch {
                    op: "adam_step",
                    lhs: p.value.shape().to_vec(),
                    rhs: vec![self.first[i].len()],
                });
            }
        }
        self.step_count += 1;
        for (i, p) in store.iter_mut().enumerate() {
            if !p.requires_grad {
                continue;
            }
            adam_update(
                p.value.data_mut(),
                &p.grad,
                &mut self.first[i],
                &mut self.second[i],
                self.step_count,
                &self.config,
            );
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::vector(vec![0.3, -1.2]));
        let mut adam = AdamState::new(AdamConfig::default(), &store);
        for _ in 0..5 {
            adam.step(&mut store).unwrap();
        }
        assert_eq!(store.by_name("w").unwrap().value.data(), &[0.3, -1.2]);
        assert_eq!(adam.step_count(), 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g, v̂ = g², so the step is lr · g / (|g| + ε).
        for g in [2.5, -0.01, 40.0] {
            let cfg = AdamConfig::with_learning_rate(0.01);
            let mut w = [1.0];
            adam_update(&mut w, &[g], &mut [0.0], &mut [0.0], 1, &cfg);
            let expected = 1.0 - 0.01 * g / (g.abs() + 1e-8);
            assert!((w[0] - expected).abs() < 1e-15);
            assert!(((1.0 - w[0]).abs() - 0.01).abs() < 1e-7);
        }
    }

    /// Scalar Adam written out independently of `adam_update`.
    fn reference_adam_on_square(lr: f64, steps: usize) -> f64 {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut w, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=steps {
            let g = 2.0 * w;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32));
            let vh = v / (1.0 - b2.powi(t as i32));
            w -= lr * mh / (vh.sqrt() + eps);
        }
        w
    }

    #[test]
    fn minimises_square() {
        let reference = reference_adam_on_square(0.1, 200);
        assert!(reference.abs() < 0.05);

        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(1.0));
        let mut adam = AdamState::new(AdamConfig::with_learning_rate(0.1), &store);
        for _ in 0..200 {
            store.zero_grad();
            let w = store.get(id).value.data()[0];
            store.get_mut(id).grad[0] = 2.0 * w;
            adam.step(&mut store).unwrap();
        }
        let w = store.get(id).value.data()[0];
        assert!(w.abs() < 0.05);
        assert_eq!(w.to_bits(), reference.to_bits());
    }

    #[test]
    fn frozen_params_are_skipped() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(1.0));
        store.get_mut(id).grad[0] = 1.0;
        store.get_mut(id).requires_grad = false;
        let mut adam = AdamState::new(AdamConfig::default(), &store);
        adam.step(&mut store).unwrap();
        assert_eq!(store.get(id).value.data()[0], 1.0);
    }

    #[test]
    fn mismatched_store_is_rejected() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::scalar(1.0));
        let mut adam = AdamState::new(AdamConfig::default(), &store);
        store.add("extra", Tensor::scalar(1.0));
        assert!(adam.step(&mut store).is_err());
    }
}
