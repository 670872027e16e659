//! Parameter initialization.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{Element, Tensor};

/// He/Kaiming normal initialization: samples `normal(0, sqrt(2/fan_in))`.
/// Sampling happens in f64 so f32 and f64 models see the same stream.
pub fn kaiming_init<T: Element, R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    assert!(fan_in >= 1, "fan_in must be positive");
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("std is finite and positive");
    let numel: usize = shape.iter().product();
    let data = (0..numel)
        .map(|_| T::from_f64(dist.sample(rng)))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape/data constructed together")
}
