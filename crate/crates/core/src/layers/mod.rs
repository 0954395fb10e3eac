//! Differentiable layers shared by training and the dense reference path.

mod activation;
mod conv;
pub(crate) mod gemm;
mod loss;
mod pool;

pub use activation::{relu_backward, relu_forward};
pub use conv::{conv2d_backward, conv2d_forward, fc_backward, fc_forward, ConvGrads, ConvLayerParams};
pub use loss::{softmax, softmax_xent};
pub use pool::{maxpool_backward, maxpool_forward, pool_output_shape, PoolIndices};
