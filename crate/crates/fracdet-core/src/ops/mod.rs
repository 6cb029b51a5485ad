//! Pure forward operators.
//!
//! Each function here is a pure map from input tensors to an output tensor;
//! the autodiff graph records calls to these and implements the matching
//! backward rules. Keeping the forward math free of graph state lets unit
//! tests and oracles call it directly.

mod conv;
mod elementwise;
mod matmul;
mod norm;
mod pool;
mod shape;

pub use conv::{conv2d, depthwise_conv2d, Padding};
pub use elementwise::{add, dropout, dropout_with_mask, gelu, hadamard, relu, scale, sigmoid, sub};
pub use matmul::{linear, matmul};
pub use norm::{l2_normalize, layer_norm, softmax};
pub use pool::{global_pool, pool2d, pool2d_with_argmax, PoolMode, PoolWindow};
pub use shape::{concat, gather, permute, reshape, scatter_add};

pub(crate) use conv::resolve_padding;
pub(crate) use elementwise::{expand_pair, reduce_to_shape};
pub(crate) use matmul::matmul_dims;
pub(crate) use norm::axis_split;
