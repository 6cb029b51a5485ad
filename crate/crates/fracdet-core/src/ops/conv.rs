//! 2-D cross-correlation: dense and depthwise variants.

use alloc::vec;

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Zero padding for conv and pool operators.
///
/// `Same` pads so that stride 1 preserves `H x W` (and stride `s` yields
/// `ceil(H/s)`); the split is symmetric with the extra row/column on the
/// bottom/right.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Same,
    Explicit {
        top: usize,
        bottom: usize,
        left: usize,
        right: usize,
    },
}

impl Padding {
    pub fn uniform(p: usize) -> Self {
        Padding::Explicit {
            top: p,
            bottom: p,
            left: p,
            right: p,
        }
    }

    pub fn none() -> Self {
        Padding::uniform(0)
    }

    /// Resolves to `(top, bottom, left, right)` for the given geometry.
    fn resolve(self, in_h: usize, in_w: usize, kh: usize, kw: usize, stride: usize) -> (usize, usize, usize, usize) {
        match self {
            Padding::Explicit { top, bottom, left, right } => (top, bottom, left, right),
            Padding::Same => {
                let pad_axis = |extent: usize, k: usize| -> (usize, usize) {
                    let out = extent.div_ceil(stride);
                    let total = ((out - 1) * stride + k).saturating_sub(extent);
                    (total / 2, total - total / 2)
                };
                let (top, bottom) = pad_axis(in_h, kh);
                let (left, right) = pad_axis(in_w, kw);
                (top, bottom, left, right)
            }
        }
    }
}

fn out_extent(op: &'static str, extent: usize, pad_lo: usize, pad_hi: usize, k: usize, stride: usize) -> Result<usize> {
    let padded = extent + pad_lo + pad_hi;
    if padded < k {
        return Err(TensorError::InvalidArgument {
            op,
            message: alloc::format!("kernel extent {k} exceeds padded input extent {padded}"),
        });
    }
    Ok((padded - k) / stride + 1)
}

/// Dense 2-D cross-correlation.
///
/// `input` is `N x C_in x H x W`, `kernel` is `C_out x C_in x kh x kw`,
/// `bias` (optional) has length `C_out`.
pub fn conv2d(
    input: &Tensor,
    kernel: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor> {
    let op = "conv2d";
    validate_conv_args(op, input, kernel, bias, stride, 4)?;
    if kernel.shape()[1] != input.shape()[1] {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: input.shape().to_vec(),
            rhs: kernel.shape().to_vec(),
        });
    }
    let (n, c_in, h, w) = dims4(input);
    let (c_out, _, kh, kw) = dims4(kernel);
    let (pt, pb, pl, pr) = padding.resolve(h, w, kh, kw, stride);
    let out_h = out_extent(op, h, pt, pb, kh, stride)?;
    let out_w = out_extent(op, w, pl, pr, kw, stride)?;

    let mut out = vec![0.0; n * c_out * out_h * out_w];
    let in_data = input.data();
    let k_data = kernel.data();
    for b in 0..n {
        for co in 0..c_out {
            let bias_v = bias.map_or(0.0, |t| t.data()[co]);
            for oh in 0..out_h {
                for ow in 0..out_w {
                    let mut acc = bias_v;
                    for ci in 0..c_in {
                        for r in 0..kh {
                            let ih = (oh * stride + r) as isize - pt as isize;
                            if ih < 0 || ih >= h as isize {
                                continue;
                            }
                            for c in 0..kw {
                                let iw = (ow * stride + c) as isize - pl as isize;
                                if iw < 0 || iw >= w as isize {
                                    continue;
                                }
                                let iv = in_data[((b * c_in + ci) * h + ih as usize) * w + iw as usize];
                                let kv = k_data[((co * c_in + ci) * kh + r) * kw + c];
                                acc += iv * kv;
                            }
                        }
                    }
                    out[((b * c_out + co) * out_h + oh) * out_w + ow] = acc;
                }
            }
        }
    }
    Tensor::from_op(op, vec![n, c_out, out_h, out_w], out)
}

/// Depthwise 2-D cross-correlation: one `kh x kw` kernel per channel,
/// stride 1, same padding, so channel `c` of the output depends only on
/// channel `c` of the input.
pub fn depthwise_conv2d(input: &Tensor, kernel: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let op = "depthwise_conv2d";
    validate_conv_args(op, input, kernel, bias, 1, 3)?;
    if kernel.shape()[0] != input.shape()[1] {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: input.shape().to_vec(),
            rhs: kernel.shape().to_vec(),
        });
    }
    let (n, channels, h, w) = dims4(input);
    let (kh, kw) = (kernel.shape()[1], kernel.shape()[2]);
    let (pt, pb, pl, pr) = Padding::Same.resolve(h, w, kh, kw, 1);
    let out_h = out_extent(op, h, pt, pb, kh, 1)?;
    let out_w = out_extent(op, w, pl, pr, kw, 1)?;
    debug_assert_eq!((out_h, out_w), (h, w));

    let mut out = vec![0.0; n * channels * out_h * out_w];
    let in_data = input.data();
    let k_data = kernel.data();
    for b in 0..n {
        for ch in 0..channels {
            let bias_v = bias.map_or(0.0, |t| t.data()[ch]);
            for oh in 0..out_h {
                for ow in 0..out_w {
                    let mut acc = bias_v;
                    for r in 0..kh {
                        let ih = (oh + r) as isize - pt as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        for c in 0..kw {
                            let iw = (ow + c) as isize - pl as isize;
                            if iw < 0 || iw >= w as isize {
                                continue;
                            }
                            let iv = in_data[((b * channels + ch) * h + ih as usize) * w + iw as usize];
                            acc += iv * k_data[(ch * kh + r) * kw + c];
                        }
                    }
                    out[((b * channels + ch) * out_h + oh) * out_w + ow] = acc;
                }
            }
        }
    }
    Tensor::from_op(op, vec![n, channels, out_h, out_w], out)
}

fn dims4(t: &Tensor) -> (usize, usize, usize, usize) {
    match t.rank() {
        4 => (t.shape()[0], t.shape()[1], t.shape()[2], t.shape()[3]),
        3 => (t.shape()[0], t.shape()[1], t.shape()[2], 1),
        _ => unreachable!("validated rank"),
    }
}

fn validate_conv_args(
    op: &'static str,
    input: &Tensor,
    kernel: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    kernel_rank: usize,
) -> Result<()> {
    if input.rank() != 4 {
        return Err(TensorError::InvalidArgument {
            op,
            message: alloc::format!("input must be rank 4 (NxCxHxW), got {:?}", input.shape()),
        });
    }
    if kernel.rank() != kernel_rank {
        return Err(TensorError::InvalidArgument {
            op,
            message: alloc::format!("kernel must be rank {kernel_rank}, got {:?}", kernel.shape()),
        });
    }
    if kernel.shape().contains(&0) || input.shape().contains(&0) {
        return Err(TensorError::InvalidArgument {
            op,
            message: alloc::string::String::from("zero extent"),
        });
    }
    if stride == 0 {
        return Err(TensorError::InvalidArgument {
            op,
            message: alloc::string::String::from("stride must be positive"),
        });
    }
    if let Some(b) = bias {
        let expect = kernel.shape()[0];
        if b.rank() != 1 || b.shape()[0] != expect {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: kernel.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
    }
    Ok(())
}

/// Padding resolution shared with the graph's backward pass.
pub(crate) fn resolve_padding(
    padding: Padding,
    in_h: usize,
    in_w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
) -> (usize, usize, usize, usize) {
    padding.resolve(in_h, in_w, kh, kw, stride)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn scalar_kernel_scales() {
        // 1x1x2x2 input, 1x1x1x1 kernel [2], bias [0] -> doubled input
        let x = t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let k = t(&[1, 1, 1, 1], &[2.0]);
        let b = t(&[1], &[0.0]);
        let y = conv2d(&x, &k, Some(&b), 1, Padding::none()).unwrap();
        assert_eq!(y.data(), &[2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn delta_kernel_is_identity_with_same_padding() {
        let x = t(&[1, 1, 3, 4], &[0.5, 1.0, -1.0, 2.0, 3.0, -0.5, 0.0, 1.5, 2.5, -2.0, 0.25, 4.0]);
        let mut k = [0.0; 9];
        k[4] = 1.0; // centre of a 3x3 kernel
        let kernel = t(&[1, 1, 3, 3], &k);
        let y = conv2d(&x, &kernel, None, 1, Padding::Same).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn same_padding_preserves_spatial_extent() {
        let x = Tensor::zeros(&[2, 3, 5, 7]);
        let k = Tensor::zeros(&[4, 3, 3, 3]);
        let y = conv2d(&x, &k, None, 1, Padding::Same).unwrap();
        assert_eq!(y.shape(), &[2, 4, 5, 7]);
    }

    #[test]
    fn channel_mismatch_names_both_shapes() {
        let x = Tensor::zeros(&[1, 3, 4, 4]);
        let k = Tensor::zeros(&[2, 4, 3, 3]);
        match conv2d(&x, &k, None, 1, Padding::Same).unwrap_err() {
            TensorError::ShapeMismatch { lhs, rhs, .. } => {
                assert_eq!(lhs, vec![1, 3, 4, 4]);
                assert_eq!(rhs, vec![2, 4, 3, 3]);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn depthwise_delta_kernels_are_identity() {
        let data: Vec<f64> = (0..2 * 3 * 4 * 4).map(|i| i as f64 * 0.1 - 1.0).collect();
        let x = t(&[2, 3, 4, 4], &data);
        let mut k = vec![0.0; 3 * 9];
        for ch in 0..3 {
            k[ch * 9 + 4] = 1.0;
        }
        let kernel = t(&[3, 3, 3], &k);
        let y = depthwise_conv2d(&x, &kernel, None).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn depthwise_channels_are_independent() {
        // Zero out channel 0 of the input; bias-free output channel 0 must be zero.
        let mut data = vec![1.0; 2 * 4 * 4];
        for v in data.iter_mut().take(16) {
            *v = 0.0;
        }
        let x = t(&[1, 2, 4, 4], &data);
        let kernel = Tensor::filled(&[2, 3, 3], 0.7).unwrap();
        let y = depthwise_conv2d(&x, &kernel, None).unwrap();
        assert!(y.data()[..16].iter().all(|&v| v == 0.0));
        assert!(y.data()[16..].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn depthwise_channel_count_mismatch_rejected() {
        let x = Tensor::zeros(&[1, 3, 4, 4]);
        let k = Tensor::zeros(&[2, 3, 3]);
        assert!(matches!(
            depthwise_conv2d(&x, &k, None).unwrap_err(),
            TensorError::ShapeMismatch { .. }
        ));
    }

    #[test]
    fn stride_two_same_padding_halves_rounding_up() {
        let x = Tensor::zeros(&[1, 1, 5, 8]);
        let k = Tensor::zeros(&[1, 1, 3, 3]);
        let y = conv2d(&x, &k, None, 2, Padding::Same).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 4]);
    }
}
