//! Parameter initializers.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Tensor;
use crate::scalar::Scalar;

/// Uniform in `[-bound, bound]`.
pub fn uniform<S: Scalar>(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor<S> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| S::lit(rng.random_range(-bound..=bound)))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}

/// Uniform with bound `1/sqrt(fan_in)`.
pub fn fan_in<S: Scalar>(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor<S> {
    uniform(rng, shape, 1.0 / (fan_in.max(1) as f64).sqrt())
}

/// Normal with mean 0 and standard deviation `std`.
pub fn normal<S: Scalar>(rng: &mut impl Rng, shape: &[usize], std: f64) -> Tensor<S> {
    let dist = Normal::new(0.0, std).expect("std is finite and non-negative");
    let n = shape.iter().product();
    let data = (0..n).map(|_| S::lit(dist.sample(rng))).collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}
