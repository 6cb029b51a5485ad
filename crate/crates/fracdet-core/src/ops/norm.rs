//! Normalization operators: softmax, layer norm, L2 normalization.

use alloc::vec;

use crate::error::{Result, TensorError};
use crate::math::{exp, sqrt};
use crate::tensor::Tensor;

fn check_axis(op: &'static str, t: &Tensor, axis: usize) -> Result<()> {
    if axis >= t.rank() {
        return Err(TensorError::InvalidArgument {
            op,
            message: alloc::format!("axis {axis} out of bounds for rank {}", t.rank()),
        });
    }
    Ok(())
}

/// Iterates slices along `axis` as `(outer, inner)` strides.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

/// Max-subtracted softmax along `axis`: outputs in (0,1), slices sum to 1.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    check_axis("softmax", x, axis)?;
    let (outer, len, inner) = axis_split(x.shape(), axis);
    let data = x.data();
    let mut out = vec![0.0; data.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| o * len * inner + j * inner + i;
            let mut max_v = f64::NEG_INFINITY;
            for j in 0..len {
                max_v = max_v.max(data[at(j)]);
            }
            let mut denom = 0.0;
            for j in 0..len {
                let e = exp(data[at(j)] - max_v);
                out[at(j)] = e;
                denom += e;
            }
            for j in 0..len {
                out[at(j)] /= denom;
            }
        }
    }
    Tensor::from_op("softmax", x.shape().to_vec(), out)
}

/// Layer normalization over the last axis with affine parameters.
///
/// Uses the population variance regularized by `eps`; the pre-affine output
/// of each slice has mean 0 and (for variance well above `eps`) variance 1.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let op = "layer_norm";
    let d = *x.shape().last().ok_or_else(|| TensorError::InvalidArgument {
        op,
        message: alloc::string::String::from("input must have rank >= 1"),
    })?;
    for (name, t) in [("gamma", gamma), ("beta", beta)] {
        if t.rank() != 1 || t.shape()[0] != d {
            let _ = name;
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: x.shape().to_vec(),
                rhs: t.shape().to_vec(),
            });
        }
    }
    let rows = x.numel() / d;
    let mut out = vec![0.0; x.numel()];
    for r in 0..rows {
        let slice = &x.data()[r * d..(r + 1) * d];
        let mean = slice.iter().sum::<f64>() / d as f64;
        let var = slice.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv_std = 1.0 / sqrt(var + eps);
        for j in 0..d {
            out[r * d + j] = (slice[j] - mean) * inv_std * gamma.data()[j] + beta.data()[j];
        }
    }
    Tensor::from_op(op, x.shape().to_vec(), out)
}

/// Scales each slice along `axis` to unit Euclidean norm, guarding small
/// slices by dividing by `max(norm, eps)` (so a zero vector stays zero).
pub fn l2_normalize(x: &Tensor, axis: usize, eps: f64) -> Result<Tensor> {
    check_axis("l2_normalize", x, axis)?;
    let (outer, len, inner) = axis_split(x.shape(), axis);
    let data = x.data();
    let mut out = vec![0.0; data.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| o * len * inner + j * inner + i;
            let mut sq = 0.0;
            for j in 0..len {
                sq += data[at(j)] * data[at(j)];
            }
            let denom = sqrt(sq).max(eps);
            for j in 0..len {
                out[at(j)] = data[at(j)] / denom;
            }
        }
    }
    Tensor::from_op("l2_normalize", x.shape().to_vec(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn softmax_symmetry_and_shift_invariance() {
        let y = softmax(&t(&[2], &[0.0, 0.0]), 0).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5]);
        // Large equal logits must not overflow.
        let y = softmax(&t(&[2], &[1000.0, 1000.0]), 0).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_direct_evaluation() {
        // Oracle: direct exp/sum evaluation of [1, 2, 3].
        let y = softmax(&t(&[3], &[1.0, 2.0, 3.0]), 0).unwrap();
        let expect = [0.09003057, 0.24472847, 0.66524096];
        for (a, e) in y.data().iter().zip(expect.iter()) {
            assert!((a - e).abs() < 1e-8, "{a} vs {e}");
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let data: Vec<f64> = (0..24).map(|i| ((i * 61) % 17) as f64 * 0.3 - 2.0).collect();
        let x = t(&[2, 3, 4], &data);
        for axis in 0..3 {
            let y = softmax(&x, axis).unwrap();
            let (outer, len, inner) = axis_split(x.shape(), axis);
            for o in 0..outer {
                for i in 0..inner {
                    let sum: f64 = (0..len).map(|j| y.data()[o * len * inner + j * inner + i]).sum();
                    assert!((sum - 1.0).abs() < 1e-12);
                    for j in 0..len {
                        let v = y.data()[o * len * inner + j * inner + i];
                        assert!(v > 0.0 && v < 1.0);
                    }
                }
            }
        }
    }

    #[test]
    fn layer_norm_constant_slice_is_zero() {
        let x = Tensor::filled(&[2, 4], 3.0).unwrap();
        let gamma = Tensor::filled(&[4], 1.0).unwrap();
        let beta = Tensor::zeros(&[4]);
        let y = layer_norm(&x, &gamma, &beta, 1e-5).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn layer_norm_two_point_standardization() {
        let x = t(&[1, 2], &[1.0, 3.0]);
        let gamma = Tensor::filled(&[2], 1.0).unwrap();
        let beta = Tensor::zeros(&[2]);
        // eps -> 0: mean 2, std 1, so output is [-1, 1].
        let y = layer_norm(&x, &gamma, &beta, 0.0).unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-12);
        assert!((y.data()[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_moment_check() {
        // Variance well above eps so the normalized variance is ~1.
        let data: Vec<f64> = (0..16).map(|i| ((i * 29) % 11) as f64 * 2.0 - 9.0).collect();
        let x = t(&[2, 8], &data);
        let gamma = Tensor::filled(&[8], 1.0).unwrap();
        let beta = Tensor::zeros(&[8]);
        let y = layer_norm(&x, &gamma, &beta, 1e-5).unwrap();
        for r in 0..2 {
            let slice = &y.data()[r * 8..(r + 1) * 8];
            let mean = slice.iter().sum::<f64>() / 8.0;
            let var = slice.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-12, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-6, "var {var}");
        }
    }

    #[test]
    fn l2_normalize_three_four_five() {
        let y = l2_normalize(&t(&[2], &[3.0, 4.0]), 0, 1e-12).unwrap();
        assert!((y.data()[0] - 0.6).abs() < 1e-15);
        assert!((y.data()[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn l2_normalize_unit_vector_unchanged() {
        let y = l2_normalize(&t(&[2], &[0.0, 1.0]), 0, 1e-12).unwrap();
        assert_eq!(y.data(), &[0.0, 1.0]);
    }

    #[test]
    fn l2_normalize_zero_vector_guarded() {
        let y = l2_normalize(&t(&[3], &[0.0, 0.0, 0.0]), 0, 1e-12).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn l2_normalize_along_inner_axis() {
        let x = t(&[2, 2], &[3.0, 4.0, 6.0, 8.0]);
        let y = l2_normalize(&x, 1, 1e-12).unwrap();
        assert!((y.data()[0] - 0.6).abs() < 1e-12);
        assert!((y.data()[2] - 0.6).abs() < 1e-12);
    }
}
