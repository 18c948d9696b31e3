use super::Tensor;
use crate::rng::{RngExt, SeededRng};

/// Kaiming-uniform initialisation scaled by fan-in (`shape[1]·k·k`),
/// bound `sqrt(6 / fan_in)`.
pub fn kaiming_uniform(shape: &[usize], rng: &mut SeededRng) -> Tensor {
    let fan_in: usize = shape[1..].iter().product();
    let bound = (6.0 / fan_in as f64).sqrt() as f32;
    Tensor::from_fn(shape, |_| rng.random_range(-bound..bound))
}

pub fn zeros_like_bias(channels: usize) -> Tensor {
    Tensor::zeros(&[channels])
}
