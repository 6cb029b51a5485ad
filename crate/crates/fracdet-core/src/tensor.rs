//! Dense N-dimensional tensor over row-major `f64` data.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Result, TensorError};

/// Dense tensor: a shape plus a flat row-major buffer of doubles.
///
/// Feature maps use the `N x C x H x W` layout convention. Every constructor
/// and every operator in this crate enforces two invariants: the buffer
/// length equals the product of the shape extents, and every element is
/// finite (a NaN or infinity is reported as [`TensorError::NonFinite`],
/// never stored).
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    /// Marks a leaf the autodiff graph should accumulate gradients for.
    pub requires_grad: bool,
}

impl Tensor {
    /// Builds a tensor, validating length and finiteness.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(TensorError::DataLength {
                expected: numel,
                got: data.len(),
            });
        }
        let t = Tensor {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
        };
        t.check_finite("tensor::new")?;
        Ok(t)
    }

    /// Internal constructor for operator outputs; validates finiteness and
    /// tags the reporting name with the producing operator.
    pub(crate) fn from_op(op: &'static str, shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let t = Tensor {
            shape,
            data,
            requires_grad: false,
        };
        t.check_finite(op)?;
        Ok(t)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
            requires_grad: false,
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Result<Self> {
        let numel = shape.iter().product();
        Tensor::new(shape, vec![value; numel])
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Tensor::new(&[1], vec![value])
    }

    /// Marks the tensor as a gradient leaf.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the flat buffer. Callers that write through this
    /// must keep the finiteness invariant (the training loop re-validates
    /// after each update).
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a scalar tensor.
    pub fn item(&self) -> Result<f64> {
        if !self.is_scalar() {
            return Err(TensorError::LossNotScalar {
                shape: self.shape.clone(),
            });
        }
        Ok(self.data[0])
    }

    /// Flat index of `(n, c, h, w)` in a rank-4 tensor.
    #[inline]
    pub fn idx4(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        debug_assert_eq!(self.rank(), 4);
        ((n * self.shape[1] + c) * self.shape[2] + h) * self.shape[3] + w
    }

    #[inline]
    pub fn at4(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.idx4(n, c, h, w)]
    }

    /// Elementwise map into a fresh tensor (validated).
    pub fn map(&self, op: &'static str, f: impl Fn(f64) -> f64) -> Result<Tensor> {
        let data = self.data.iter().map(|&x| f(x)).collect();
        Tensor::from_op(op, self.shape.clone(), data)
    }

    pub(crate) fn check_finite(&self, op: &'static str) -> Result<()> {
        if self.data.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(TensorError::NonFinite { op })
        }
    }

    /// Maximum absolute difference against another tensor of the same shape.
    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                op: "max_abs_diff",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| libm::fabs(a - b))
            .fold(0.0, f64::max))
    }
}

/// Row-major strides for a shape.
pub fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    strides
}

/// Decomposes a flat index into coordinates for `shape`.
pub fn unravel(mut flat: usize, shape: &[usize]) -> Vec<usize> {
    let mut coords = vec![0usize; shape.len()];
    for d in (0..shape.len()).rev() {
        coords[d] = flat % shape[d];
        flat /= shape[d];
    }
    coords
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_length_mismatch() {
        let err = Tensor::new(&[2, 3], vec![1.0; 5]).unwrap_err();
        assert_eq!(err, TensorError::DataLength { expected: 6, got: 5 });
    }

    #[test]
    fn new_rejects_non_finite() {
        let err = Tensor::new(&[2], vec![1.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, TensorError::NonFinite { .. }));
        let err = Tensor::new(&[1], vec![f64::INFINITY]).unwrap_err();
        assert!(matches!(err, TensorError::NonFinite { .. }));
    }

    #[test]
    fn idx4_is_row_major() {
        let t = Tensor::zeros(&[2, 3, 4, 5]);
        assert_eq!(t.idx4(0, 0, 0, 0), 0);
        assert_eq!(t.idx4(0, 0, 0, 1), 1);
        assert_eq!(t.idx4(0, 0, 1, 0), 5);
        assert_eq!(t.idx4(0, 1, 0, 0), 20);
        assert_eq!(t.idx4(1, 0, 0, 0), 60);
    }

    #[test]
    fn strides_and_unravel_roundtrip() {
        let shape = [2, 3, 4];
        let strides = strides_of(&shape);
        assert_eq!(strides, vec![12, 4, 1]);
        for flat in 0..24 {
            let coords = unravel(flat, &shape);
            let back: usize = coords.iter().zip(strides.iter()).map(|(c, s)| c * s).sum();
            assert_eq!(back, flat);
        }
    }
}
