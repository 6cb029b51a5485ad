//! Elementwise operators and NumPy-style broadcasting.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Result, TensorError};
use crate::math;
use crate::rng::Rng;
use crate::tensor::{strides_of, unravel, Tensor};

/// Right-aligned broadcast shape of two operand shapes.
fn broadcast_shapes(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        if da != db && da != 1 && db != 1 {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: a.to_vec(),
                rhs: b.to_vec(),
            });
        }
        out[i] = da.max(db);
    }
    Ok(out)
}

fn pad_left(shape: &[usize], rank: usize) -> Vec<usize> {
    let mut padded = vec![1usize; rank];
    padded[rank - shape.len()..].copy_from_slice(shape);
    padded
}

/// Flat index into `shape` (padded to `coords.len()`) for broadcast reads.
fn broadcast_flat(coords: &[usize], padded: &[usize], strides: &[usize]) -> usize {
    let mut flat = 0;
    for d in 0..coords.len() {
        if padded[d] != 1 {
            flat += coords[d] * strides[d];
        }
    }
    flat
}

fn binary(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    if a.shape() == b.shape() {
        let data = a
            .data()
            .iter()
            .zip(b.data().iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
        return Tensor::from_op(op, a.shape().to_vec(), data);
    }
    let out_shape = broadcast_shapes(op, a.shape(), b.shape())?;
    let rank = out_shape.len();
    let a_pad = pad_left(a.shape(), rank);
    let b_pad = pad_left(b.shape(), rank);
    let a_strides = strides_of(&a_pad);
    let b_strides = strides_of(&b_pad);
    let numel: usize = out_shape.iter().product();
    let mut data = vec![0.0; numel];
    for (flat, slot) in data.iter_mut().enumerate() {
        let coords = unravel(flat, &out_shape);
        let av = a.data()[broadcast_flat(&coords, &a_pad, &a_strides)];
        let bv = b.data()[broadcast_flat(&coords, &b_pad, &b_strides)];
        *slot = f(av, bv);
    }
    Tensor::from_op(op, out_shape, data)
}

/// Elementwise sum with broadcasting.
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    binary("add", a, b, |x, y| x + y)
}

/// Elementwise difference with broadcasting.
pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    binary("sub", a, b, |x, y| x - y)
}

/// Hadamard (elementwise) product with broadcasting.
pub fn hadamard(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    binary("hadamard", a, b, |x, y| x * y)
}

/// Multiplication by a compile-time-known scalar.
pub fn scale(x: &Tensor, c: f64) -> Result<Tensor> {
    x.map("scale", |v| v * c)
}

pub fn relu(x: &Tensor) -> Result<Tensor> {
    x.map("relu", |v| if v > 0.0 { v } else { 0.0 })
}

/// Exact Gaussian-CDF GELU (erf form, not the tanh approximation).
pub fn gelu(x: &Tensor) -> Result<Tensor> {
    x.map("gelu", math::gelu)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    x.map("sigmoid", math::sigmoid)
}

/// Inverted dropout. In training mode each element is zeroed independently
/// with probability `p` and survivors are scaled by `1/(1-p)`; in eval mode
/// the input passes through untouched.
pub fn dropout(x: &Tensor, p: f64, rng: &mut Rng, train: bool) -> Result<Tensor> {
    dropout_with_mask(x, p, rng, train).map(|(t, _)| t)
}

/// Dropout that also returns the applied mask (0 or `1/(1-p)` per element);
/// the graph saves the mask for the backward pass.
pub fn dropout_with_mask(
    x: &Tensor,
    p: f64,
    rng: &mut Rng,
    train: bool,
) -> Result<(Tensor, Vec<f64>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(TensorError::InvalidArgument {
            op: "dropout",
            message: alloc::format!("p must be in [0, 1), got {p}"),
        });
    }
    if !train {
        return Ok((x.clone(), vec![1.0; x.numel()]));
    }
    let keep_scale = 1.0 / (1.0 - p);
    let mask: Vec<f64> = (0..x.numel())
        .map(|_| if rng.next_f64() < p { 0.0 } else { keep_scale })
        .collect();
    let data = x
        .data()
        .iter()
        .zip(mask.iter())
        .map(|(&v, &m)| v * m)
        .collect();
    let out = Tensor::from_op("dropout", x.shape().to_vec(), data)?;
    Ok((out, mask))
}

/// Expands both operands elementwise to `out_shape` (broadcast replay used
/// by the Hadamard backward rule).
pub(crate) fn expand_pair(a: &Tensor, b: &Tensor, out_shape: &[usize]) -> (Vec<f64>, Vec<f64>) {
    if a.shape() == out_shape && b.shape() == out_shape {
        return (a.data().to_vec(), b.data().to_vec());
    }
    let rank = out_shape.len();
    let a_pad = pad_left(a.shape(), rank);
    let b_pad = pad_left(b.shape(), rank);
    let a_strides = strides_of(&a_pad);
    let b_strides = strides_of(&b_pad);
    let numel: usize = out_shape.iter().product();
    let mut a_exp = vec![0.0; numel];
    let mut b_exp = vec![0.0; numel];
    for flat in 0..numel {
        let coords = unravel(flat, out_shape);
        a_exp[flat] = a.data()[broadcast_flat(&coords, &a_pad, &a_strides)];
        b_exp[flat] = b.data()[broadcast_flat(&coords, &b_pad, &b_strides)];
    }
    (a_exp, b_exp)
}

/// Sums `grad` (of `grad_shape`) down to `target_shape`, undoing broadcast.
pub(crate) fn reduce_to_shape(grad: &[f64], grad_shape: &[usize], target_shape: &[usize]) -> Vec<f64> {
    if grad_shape == target_shape {
        return grad.to_vec();
    }
    let rank = grad_shape.len();
    let padded = pad_left(target_shape, rank);
    let strides = strides_of(&padded);
    let target_numel: usize = target_shape.iter().product();
    let mut out = vec![0.0; target_numel];
    for (flat, &g) in grad.iter().enumerate() {
        let coords = unravel(flat, grad_shape);
        out[broadcast_flat(&coords, &padded, &strides)] += g;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn add_same_shape() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2, 2], &[10.0, 20.0, 30.0, 40.0]);
        assert_eq!(add(&a, &b).unwrap().data(), &[11.0, 22.0, 33.0, 44.0]);
    }

    #[test]
    fn add_broadcasts_bias_row() {
        let a = t(&[2, 3], &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let b = t(&[3], &[1.0, 2.0, 3.0]);
        assert_eq!(add(&a, &b).unwrap().data(), &[1.0, 2.0, 3.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn add_broadcasts_channel_weights_over_map() {
        // N x C x 1 x 1 weights against N x C x H x W map
        let x = t(&[1, 2, 2, 2], &[1.0; 8]);
        let w = t(&[1, 2, 1, 1], &[2.0, 3.0]);
        let y = hadamard(&x, &w).unwrap();
        assert_eq!(y.data(), &[2.0, 2.0, 2.0, 2.0, 3.0, 3.0, 3.0, 3.0]);
    }

    #[test]
    fn incompatible_shapes_rejected() {
        let a = t(&[2, 3], &[0.0; 6]);
        let b = t(&[2, 2], &[0.0; 4]);
        let err = add(&a, &b).unwrap_err();
        assert!(matches!(err, TensorError::ShapeMismatch { op: "add", .. }));
    }

    #[test]
    fn hadamard_with_ones_is_identity() {
        let x = t(&[2, 2], &[1.5, -2.0, 0.25, 9.0]);
        let ones = Tensor::filled(&[2, 2], 1.0).unwrap();
        assert_eq!(hadamard(&x, &ones).unwrap(), x);
    }

    #[test]
    fn relu_and_symmetry_points() {
        let x = t(&[3], &[-1.0, 0.0, 2.0]);
        assert_eq!(relu(&x).unwrap().data(), &[0.0, 0.0, 2.0]);
        assert_eq!(gelu(&t(&[1], &[0.0])).unwrap().data(), &[0.0]);
        assert_eq!(sigmoid(&t(&[1], &[0.0])).unwrap().data(), &[0.5]);
    }

    #[test]
    fn sigmoid_closed_form_ln3() {
        let x = t(&[1], &[math::log(3.0)]);
        let y = sigmoid(&x).unwrap();
        assert!((y.data()[0] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn dropout_p_zero_is_exact_identity() {
        let x = t(&[4], &[1.0, -2.0, 3.0, 0.5]);
        let mut rng = Rng::seeded(0);
        let y = dropout(&x, 0.0, &mut rng, true).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn dropout_same_seed_same_mask() {
        let x = t(&[64], &[1.0; 64]);
        let mut r1 = Rng::seeded(5);
        let mut r2 = Rng::seeded(5);
        let a = dropout(&x, 0.5, &mut r1, true).unwrap();
        let b = dropout(&x, 0.5, &mut r2, true).unwrap();
        assert_eq!(a.data(), b.data());
        // Survivors are scaled by 1/(1-p) = 2.
        assert!(a.data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn dropout_eval_is_identity() {
        let x = t(&[4], &[1.0, -2.0, 3.0, 0.5]);
        let mut rng = Rng::seeded(0);
        let y = dropout(&x, 0.9, &mut rng, false).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn dropout_rejects_bad_p() {
        let x = t(&[1], &[1.0]);
        let mut rng = Rng::seeded(0);
        assert!(dropout(&x, 1.0, &mut rng, true).is_err());
        assert!(dropout(&x, -0.1, &mut rng, true).is_err());
    }

    #[test]
    fn reduce_to_shape_sums_broadcast_axes() {
        // grad of shape [2, 3] reduced to bias shape [3]
        let grad = [1.0, 2.0, 3.0, 10.0, 20.0, 30.0];
        assert_eq!(reduce_to_shape(&grad, &[2, 3], &[3]), vec![11.0, 22.0, 33.0]);
        // reduced to [2, 1]-style broadcast target
        assert_eq!(reduce_to_shape(&grad, &[2, 3], &[2, 1]), vec![6.0, 60.0]);
    }
}
