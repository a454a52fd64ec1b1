//! Random tensor construction. Every draw goes through a caller-owned RNG so
//! a seed fully determines the values.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use super::{numel, Tensor};

/// Trainable tensor with entries uniform in `±sqrt(1 / fan_in)`.
pub fn fan_in_uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = (1.0 / fan_in.max(1) as f32).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let data = (0..numel(shape)).map(|_| dist.sample(rng)).collect();
    Tensor::param(data, shape).expect("shape matches buffer")
}

/// Trainable zero tensor (biases).
pub fn zeros_param(shape: &[usize]) -> Tensor {
    Tensor::param(vec![0.0; numel(shape)], shape).expect("shape matches buffer")
}

/// Constant tensor with i.i.d. `N(0, std²)` entries.
pub fn normal<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], std: f32) -> Tensor {
    let data = (0..numel(shape))
        .map(|_| {
            let z: f32 = StandardNormal.sample(rng);
            z * std
        })
        .collect();
    Tensor::new(data, shape).expect("shape matches buffer")
}
