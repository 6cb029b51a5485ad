//! Shape manipulation: reshape, permute, concat, and flat gather/scatter.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Result, TensorError};
use crate::tensor::{strides_of, unravel, Tensor};

/// Reinterprets the buffer under a new shape with the same element count.
pub fn reshape(x: &Tensor, new_shape: &[usize]) -> Result<Tensor> {
    let numel: usize = new_shape.iter().product();
    if numel != x.numel() {
        return Err(TensorError::ShapeMismatch {
            op: "reshape",
            lhs: x.shape().to_vec(),
            rhs: new_shape.to_vec(),
        });
    }
    Tensor::from_op("reshape", new_shape.to_vec(), x.data().to_vec())
}

/// Reorders axes: output axis `d` is input axis `perm[d]`.
pub fn permute(x: &Tensor, perm: &[usize]) -> Result<Tensor> {
    let op = "permute";
    let rank = x.rank();
    let mut seen = vec![false; rank];
    if perm.len() != rank || perm.iter().any(|&p| p >= rank || core::mem::replace(&mut seen[p], true)) {
        return Err(TensorError::InvalidArgument {
            op,
            message: alloc::format!("{perm:?} is not a permutation of 0..{rank}"),
        });
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| x.shape()[p]).collect();
    let in_strides = strides_of(x.shape());
    let mut out = vec![0.0; x.numel()];
    for (flat, slot) in out.iter_mut().enumerate() {
        let coords = unravel(flat, &out_shape);
        let mut src = 0;
        for (d, &c) in coords.iter().enumerate() {
            src += c * in_strides[perm[d]];
        }
        *slot = x.data()[src];
    }
    Tensor::from_op(op, out_shape, out)
}

/// Concatenates tensors along `axis`; all other extents must agree.
pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    let op = "concat";
    let first = parts.first().ok_or_else(|| TensorError::InvalidArgument {
        op,
        message: alloc::string::String::from("no tensors to concatenate"),
    })?;
    let rank = first.rank();
    if axis >= rank {
        return Err(TensorError::InvalidArgument {
            op,
            message: alloc::format!("axis {axis} out of bounds for rank {rank}"),
        });
    }
    let mut axis_total = 0;
    for p in parts {
        if p.rank() != rank
            || p.shape()
                .iter()
                .zip(first.shape().iter())
                .enumerate()
                .any(|(d, (a, b))| d != axis && a != b)
        {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: first.shape().to_vec(),
                rhs: p.shape().to_vec(),
            });
        }
        axis_total += p.shape()[axis];
    }
    let mut out_shape = first.shape().to_vec();
    out_shape[axis] = axis_total;
    let outer: usize = first.shape()[..axis].iter().product();
    let inner: usize = first.shape()[axis + 1..].iter().product();
    let mut out = vec![0.0; outer * axis_total * inner];
    let mut axis_off = 0;
    for p in parts {
        let len = p.shape()[axis];
        for o in 0..outer {
            let src = o * len * inner;
            let dst = (o * axis_total + axis_off) * inner;
            out[dst..dst + len * inner].copy_from_slice(&p.data()[src..src + len * inner]);
        }
        axis_off += len;
    }
    Tensor::from_op(op, out_shape, out)
}

/// Gathers elements at flat `indices` into a rank-1 tensor (order preserved;
/// indices may repeat).
pub fn gather(x: &Tensor, indices: &[usize]) -> Result<Tensor> {
    let op = "gather";
    if let Some(&bad) = indices.iter().find(|&&i| i >= x.numel()) {
        return Err(TensorError::InvalidArgument {
            op,
            message: alloc::format!("index {bad} out of bounds for {} elements", x.numel()),
        });
    }
    let data = indices.iter().map(|&i| x.data()[i]).collect();
    Tensor::from_op(op, vec![indices.len()], data)
}

/// Scatter-add: places element `i` of rank-1 `x` at flat index `indices[i]`
/// of a zero tensor with `out_numel` elements, accumulating on repeats.
/// This is the exact adjoint of [`gather`].
pub fn scatter_add(x: &Tensor, indices: &[usize], out_numel: usize) -> Result<Tensor> {
    let op = "scatter_add";
    if x.numel() != indices.len() {
        return Err(TensorError::InvalidArgument {
            op,
            message: alloc::format!("{} values vs {} indices", x.numel(), indices.len()),
        });
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= out_numel) {
        return Err(TensorError::InvalidArgument {
            op,
            message: alloc::format!("index {bad} out of bounds for {out_numel} elements"),
        });
    }
    let mut out = vec![0.0; out_numel];
    for (v, &i) in x.data().iter().zip(indices.iter()) {
        out[i] += v;
    }
    Tensor::from_op(op, vec![out_numel], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn reshape_preserves_order_and_rejects_bad_numel() {
        let x = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let y = reshape(&x, &[3, 2]).unwrap();
        assert_eq!(y.data(), x.data());
        assert!(reshape(&x, &[4, 2]).is_err());
    }

    #[test]
    fn permute_transposes() {
        let x = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let y = permute(&x, &[1, 0]).unwrap();
        assert_eq!(y.shape(), &[3, 2]);
        assert_eq!(y.data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }

    #[test]
    fn permute_nchw_to_tokens() {
        // N x C x H x W -> N x H x W x C is the token layout used by attention.
        let x = t(&[1, 2, 1, 2], &[1.0, 2.0, 3.0, 4.0]);
        let y = permute(&x, &[0, 2, 3, 1]).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[1.0, 3.0, 2.0, 4.0]);
    }

    #[test]
    fn permute_rejects_non_permutation() {
        let x = Tensor::zeros(&[2, 2]);
        assert!(permute(&x, &[0, 0]).is_err());
        assert!(permute(&x, &[0]).is_err());
    }

    #[test]
    fn concat_along_each_axis() {
        let a = t(&[1, 2], &[1.0, 2.0]);
        let b = t(&[1, 2], &[3.0, 4.0]);
        let rows = concat(&[&a, &b], 0).unwrap();
        assert_eq!(rows.shape(), &[2, 2]);
        assert_eq!(rows.data(), &[1.0, 2.0, 3.0, 4.0]);
        let cols = concat(&[&a, &b], 1).unwrap();
        assert_eq!(cols.shape(), &[1, 4]);
        assert_eq!(cols.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn concat_shape_mismatch_rejected() {
        let a = Tensor::zeros(&[1, 2]);
        let b = Tensor::zeros(&[2, 3]);
        assert!(concat(&[&a, &b], 1).is_err());
    }

    #[test]
    fn gather_scatter_roundtrip() {
        let x = t(&[4], &[10.0, 20.0, 30.0, 40.0]);
        let g = gather(&x, &[2, 0]).unwrap();
        assert_eq!(g.data(), &[30.0, 10.0]);
        let s = scatter_add(&g, &[2, 0], 4).unwrap();
        assert_eq!(s.data(), &[10.0, 0.0, 30.0, 0.0]);
    }

    #[test]
    fn scatter_accumulates_repeats() {
        let x = t(&[2], &[1.0, 2.0]);
        let s = scatter_add(&x, &[1, 1], 3).unwrap();
        assert_eq!(s.data(), &[0.0, 3.0, 0.0]);
    }

    #[test]
    fn gather_rejects_out_of_bounds() {
        let x = Tensor::zeros(&[2]);
        assert!(gather(&x, &[2]).is_err());
    }
}
