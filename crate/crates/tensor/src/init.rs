//! Parameter initialisers.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::Tensor;

/// Glorot uniform over `[-a, a]`, `a = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform(rng: &mut impl Rng, fan_in: usize, fan_out: usize, shape: &[usize]) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(rng, shape, a)
}

pub fn uniform(rng: &mut impl Rng, shape: &[usize], limit: f64) -> Tensor {
    let numel = shape.iter().product();
    let data = (0..numel).map(|_| rng.random_range(-limit..=limit)).collect();
    Tensor::new(shape.to_vec(), data).expect("numel matches shape")
}

pub fn normal(rng: &mut impl Rng, shape: &[usize], std: f64) -> Tensor {
    let dist = Normal::new(0.0, std).expect("std must be finite and non-negative");
    let numel = shape.iter().product();
    let data = (0..numel).map(|_| dist.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("numel matches shape")
}
