//! Scalar math routed through `libm`.
//!
//! `core` has no transcendental functions, and the platform `libm` that
//! `std` binds to is allowed to differ between targets. Funnelling every
//! call through this module keeps the crate `no_std` and makes results
//! bit-identical across platforms.

pub use libm::{erf, exp, expm1, fabs, floor, log, log1p, pow, round, sqrt, tanh};

/// `1/sqrt(2)`, used by the exact-erf GELU.
pub const FRAC_1_SQRT_2: f64 = core::f64::consts::FRAC_1_SQRT_2;

/// Logistic sigmoid, computed without overflow for large |x|.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

/// Exact Gaussian-CDF GELU: `x * Phi(x)` with `Phi(x) = (1 + erf(x/sqrt(2)))/2`.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + erf(x * FRAC_1_SQRT_2))
}

/// Derivative of the exact GELU: `Phi(x) + x * phi(x)`.
pub fn gelu_grad(x: f64) -> f64 {
    const FRAC_1_SQRT_2PI: f64 = 0.3989422804014327;
    let cdf = 0.5 * (1.0 + erf(x * FRAC_1_SQRT_2));
    let pdf = FRAC_1_SQRT_2PI * exp(-0.5 * x * x);
    cdf + x * pdf
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_symmetry_and_closed_form() {
        assert_eq!(sigmoid(0.0), 0.5);
        // sigmoid(ln 3) = 3/4
        assert!((sigmoid(log(3.0)) - 0.75).abs() < 1e-12);
        // No overflow at extremes.
        assert!(sigmoid(1000.0) <= 1.0);
        assert!(sigmoid(-1000.0) >= 0.0);
    }

    #[test]
    fn gelu_zero_and_sign() {
        assert_eq!(gelu(0.0), 0.0);
        assert!(gelu(1.0) > 0.0);
        assert!(gelu(-1.0) < 0.0);
        // gelu(x) -> x for large x, -> 0 for very negative x.
        assert!((gelu(10.0) - 10.0).abs() < 1e-12);
        assert!(gelu(-10.0).abs() < 1e-12);
    }

    #[test]
    fn gelu_grad_matches_finite_difference() {
        let h = 1e-6;
        for &x in &[-2.0, -0.5, 0.0, 0.3, 1.7] {
            let num = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((gelu_grad(x) - num).abs() < 1e-8, "x={x}");
        }
    }
}
