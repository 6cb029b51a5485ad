//! Average and max pooling.
//!
//! Windows start at multiples of the stride and are clipped to the map, so
//! a map of extent `H` yields `ceil(H/stride)` outputs and no window ever
//! crosses the border; average pooling divides by the true (clipped) window
//! size. Max pooling resolves ties to the first element in scan order.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolMode {
    Avg,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolWindow {
    /// One window covering the whole map; output is `N x C x 1 x 1`.
    Global,
    /// Square `k x k` window.
    Square(usize),
}

/// Pools `input` (`N x C x H x W`). See [`pool2d_with_argmax`] for the
/// variant the autodiff graph records.
pub fn pool2d(input: &Tensor, mode: PoolMode, window: PoolWindow, stride: usize) -> Result<Tensor> {
    pool2d_with_argmax(input, mode, window, stride).map(|(t, _)| t)
}

/// Global pooling convenience: returns `N x C x 1 x 1`.
pub fn global_pool(input: &Tensor, mode: PoolMode) -> Result<Tensor> {
    pool2d(input, mode, PoolWindow::Global, 1)
}

/// Pooling that also returns, for max mode, the flat input index chosen per
/// output element (first maximum in scan order); empty for avg mode.
pub fn pool2d_with_argmax(
    input: &Tensor,
    mode: PoolMode,
    window: PoolWindow,
    stride: usize,
) -> Result<(Tensor, Vec<usize>)> {
    let op = "pool2d";
    if input.rank() != 4 {
        return Err(TensorError::InvalidArgument {
            op,
            message: alloc::format!("input must be rank 4, got {:?}", input.shape()),
        });
    }
    let (n, c, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let (k_h, k_w, stride) = match window {
        PoolWindow::Global => (h, w, usize::MAX),
        PoolWindow::Square(k) => (k, k, stride),
    };
    if k_h == 0 || k_w == 0 || h == 0 || w == 0 {
        return Err(TensorError::EmptyWindow { op });
    }
    if stride == 0 {
        return Err(TensorError::InvalidArgument {
            op,
            message: alloc::string::String::from("stride must be positive"),
        });
    }
    let out_h = h.div_ceil(stride.min(h));
    let out_w = w.div_ceil(stride.min(w));
    let (out_h, out_w) = match window {
        PoolWindow::Global => (1, 1),
        PoolWindow::Square(_) => (out_h, out_w),
    };

    let mut out = vec![0.0; n * c * out_h * out_w];
    let mut argmax = if matches!(mode, PoolMode::Max) {
        vec![0usize; out.len()]
    } else {
        Vec::new()
    };
    let data = input.data();
    for b in 0..n {
        for ch in 0..c {
            let plane = (b * c + ch) * h * w;
            for oh in 0..out_h {
                for ow in 0..out_w {
                    let h0 = match window {
                        PoolWindow::Global => 0,
                        PoolWindow::Square(_) => oh * stride,
                    };
                    let w0 = match window {
                        PoolWindow::Global => 0,
                        PoolWindow::Square(_) => ow * stride,
                    };
                    let h1 = (h0 + k_h).min(h);
                    let w1 = (w0 + k_w).min(w);
                    let out_idx = ((b * c + ch) * out_h + oh) * out_w + ow;
                    match mode {
                        PoolMode::Avg => {
                            let mut acc = 0.0;
                            for ih in h0..h1 {
                                for iw in w0..w1 {
                                    acc += data[plane + ih * w + iw];
                                }
                            }
                            let count = ((h1 - h0) * (w1 - w0)) as f64;
                            out[out_idx] = acc / count;
                        }
                        PoolMode::Max => {
                            let mut best = f64::NEG_INFINITY;
                            let mut best_idx = plane + h0 * w + w0;
                            for ih in h0..h1 {
                                for iw in w0..w1 {
                                    let v = data[plane + ih * w + iw];
                                    if v > best {
                                        best = v;
                                        best_idx = plane + ih * w + iw;
                                    }
                                }
                            }
                            out[out_idx] = best;
                            argmax[out_idx] = best_idx;
                        }
                    }
                }
            }
        }
    }
    let t = Tensor::from_op(op, vec![n, c, out_h, out_w], out)?;
    Ok((t, argmax))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn global_avg_and_max() {
        let x = t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let avg = global_pool(&x, PoolMode::Avg).unwrap();
        let max = global_pool(&x, PoolMode::Max).unwrap();
        assert_eq!(avg.shape(), &[1, 1, 1, 1]);
        assert_eq!(avg.data(), &[2.5]);
        assert_eq!(max.data(), &[4.0]);
    }

    #[test]
    fn constant_input_avg_equals_max() {
        let x = Tensor::filled(&[1, 3, 4, 5], 0.7).unwrap();
        let avg = global_pool(&x, PoolMode::Avg).unwrap();
        let max = global_pool(&x, PoolMode::Max).unwrap();
        assert_eq!(max.data(), &[0.7, 0.7, 0.7]);
        for (&a, &m) in avg.data().iter().zip(max.data().iter()) {
            // Averaging identical values accumulates rounding, so compare
            // within one ulp-scale tolerance rather than bitwise.
            assert!((a - m).abs() < 1e-15);
        }
    }

    #[test]
    fn window_two_stride_two_matches_loop_oracle() {
        let data: Vec<f64> = (0..16).map(|i| ((i * 37) % 13) as f64 * 0.25).collect();
        let x = t(&[1, 1, 4, 4], &data);
        let y = pool2d(&x, PoolMode::Avg, PoolWindow::Square(2), 2).unwrap();
        // Per-window loop oracle, written directly.
        let mut expect = vec![0.0; 4];
        for oh in 0..2 {
            for ow in 0..2 {
                let mut acc = 0.0;
                for r in 0..2 {
                    for c in 0..2 {
                        acc += data[(oh * 2 + r) * 4 + (ow * 2 + c)];
                    }
                }
                expect[oh * 2 + ow] = acc / 4.0;
            }
        }
        assert_eq!(y.data(), expect.as_slice());
    }

    #[test]
    fn ragged_edge_divides_by_true_window_size() {
        // H = 5, stride 2, window 2: last window is a single row.
        let x = t(&[1, 1, 5, 1], &[1.0, 3.0, 5.0, 7.0, 9.0]);
        let y = pool2d(&x, PoolMode::Avg, PoolWindow::Square(2), 2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 1]);
        assert_eq!(y.data(), &[2.0, 6.0, 9.0]);
    }

    #[test]
    fn max_ties_resolve_to_first() {
        let x = t(&[1, 1, 1, 4], &[2.0, 2.0, 1.0, 2.0]);
        let (y, argmax) = pool2d_with_argmax(&x, PoolMode::Max, PoolWindow::Global, 1).unwrap();
        assert_eq!(y.data(), &[2.0]);
        assert_eq!(argmax, vec![0]);
    }

    #[test]
    fn empty_window_rejected() {
        let x = Tensor::zeros(&[1, 1, 4, 4]);
        assert!(matches!(
            pool2d(&x, PoolMode::Avg, PoolWindow::Square(0), 1).unwrap_err(),
            TensorError::EmptyWindow { .. }
        ));
    }
}
