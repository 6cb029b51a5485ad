//! Batched matrix multiplication and the linear layer built on it.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Result, TensorError};
use crate::ops::add;
use crate::tensor::Tensor;

/// `a @ b` where `a` is `(..., m, k)` and `b` is either `(..., k, n)` with
/// identical leading dims or a plain `(k, n)` matrix shared across the batch.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (batch, m, k, n, b_batched) = matmul_dims(a, b)?;
    let a_data = a.data();
    let b_data = b.data();
    let mut out = vec![0.0; batch * m * n];
    for t in 0..batch {
        let a_off = t * m * k;
        let b_off = if b_batched { t * k * n } else { 0 };
        let o_off = t * m * n;
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += a_data[a_off + i * k + p] * b_data[b_off + p * n + j];
                }
                out[o_off + i * n + j] = acc;
            }
        }
    }
    let mut shape: Vec<usize> = a.shape()[..a.rank() - 2].to_vec();
    shape.push(m);
    shape.push(n);
    Tensor::from_op("matmul", shape, out)
}

/// Validates operand shapes; returns `(batch, m, k, n, rhs_is_batched)`.
pub(crate) fn matmul_dims(a: &Tensor, b: &Tensor) -> Result<(usize, usize, usize, usize, bool)> {
    let mismatch = || TensorError::ShapeMismatch {
        op: "matmul",
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    };
    if a.rank() < 2 || b.rank() < 2 {
        return Err(mismatch());
    }
    let m = a.shape()[a.rank() - 2];
    let k = a.shape()[a.rank() - 1];
    let batch: usize = a.shape()[..a.rank() - 2].iter().product();
    if b.rank() == 2 {
        if b.shape()[0] != k {
            return Err(mismatch());
        }
        return Ok((batch, m, k, b.shape()[1], false));
    }
    if b.rank() != a.rank() || b.shape()[..b.rank() - 2] != a.shape()[..a.rank() - 2] {
        return Err(mismatch());
    }
    if b.shape()[b.rank() - 2] != k {
        return Err(mismatch());
    }
    Ok((batch, m, k, b.shape()[b.rank() - 1], true))
}

/// `x @ w + bias` with `w` stored as `(in, out)` and `bias` of length `out`.
pub fn linear(x: &Tensor, w: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let y = matmul(x, w)?;
    match bias {
        Some(b) => add(&y, b),
        None => Ok(y),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_2d() {
        let a = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = t(&[3, 2], &[7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 2]);
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn matmul_batched_and_broadcast_rhs() {
        let a = t(&[2, 1, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2, 2, 1], &[1.0, 1.0, 2.0, 2.0]);
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 1, 1]);
        assert_eq!(c.data(), &[3.0, 14.0]);

        let shared = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let d = matmul(&a, &shared).unwrap();
        assert_eq!(d.shape(), &[2, 1, 2]);
        assert_eq!(d.data(), a.data());
    }

    #[test]
    fn inner_dim_mismatch_rejected() {
        let a = t(&[2, 3], &[0.0; 6]);
        let b = t(&[2, 2], &[0.0; 4]);
        assert!(matches!(
            matmul(&a, &b).unwrap_err(),
            TensorError::ShapeMismatch { op: "matmul", .. }
        ));
    }

    #[test]
    fn linear_applies_bias_per_output() {
        let x = t(&[1, 2], &[1.0, 1.0]);
        let w = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = t(&[3], &[0.1, 0.2, 0.3]);
        let y = linear(&x, &w, Some(&b)).unwrap();
        assert_eq!(y.data(), &[5.1, 7.2, 9.3]);
    }
}
