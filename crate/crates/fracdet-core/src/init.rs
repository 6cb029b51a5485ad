//! Weight initialization: fan-in-scaled uniform weights, zero biases.
//!
//! Weights draw from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`; biases start at
//! zero. All draws come from the caller's [`Rng`] in field order, so a model
//! build is a pure function of the seed.

use alloc::vec::Vec;

use crate::math::sqrt;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Uniform tensor in `(-bound, bound)` with `bound = 1/sqrt(fan_in)`.
pub fn fan_in_uniform(rng: &mut Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / sqrt(fan_in.max(1) as f64);
    let numel: usize = shape.iter().product();
    let data: Vec<f64> = (0..numel).map(|_| rng.uniform(-bound, bound)).collect();
    Tensor::new(shape, data).expect("uniform draw is finite")
}

/// Linear weight stored as `(in, out)` so that `y = x @ w + b`.
pub fn linear_weight(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Tensor {
    fan_in_uniform(rng, &[fan_in, fan_out], fan_in)
}

/// Dense conv kernel `C_out x C_in x kh x kw`.
pub fn conv_kernel(rng: &mut Rng, c_out: usize, c_in: usize, kh: usize, kw: usize) -> Tensor {
    fan_in_uniform(rng, &[c_out, c_in, kh, kw], c_in * kh * kw)
}

/// Depthwise kernel `C x kh x kw` (fan-in is the window size).
pub fn depthwise_kernel(rng: &mut Rng, channels: usize, kh: usize, kw: usize) -> Tensor {
    fan_in_uniform(rng, &[channels, kh, kw], kh * kw)
}

/// Zero bias of length `n`.
pub fn zero_bias(n: usize) -> Tensor {
    Tensor::zeros(&[n])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounds_follow_fan_in() {
        let mut rng = Rng::seeded(1);
        let w = fan_in_uniform(&mut rng, &[100], 16);
        let bound = 0.25;
        assert!(w.data().iter().all(|&x| x > -bound && x < bound));
        // Not degenerate.
        assert!(w.data().iter().any(|&x| x.abs() > 0.01));
    }

    #[test]
    fn deterministic_per_seed() {
        let mut a = Rng::seeded(9);
        let mut b = Rng::seeded(9);
        let wa = conv_kernel(&mut a, 4, 3, 3, 3);
        let wb = conv_kernel(&mut b, 4, 3, 3, 3);
        assert_eq!(wa.data(), wb.data());
    }
}
