//! Differentiable operators.
//!
//! Every forward function is pure (batch-norm in train mode also updates its
//! running statistics). Each `*_vjp` returns gradients in the gradient
//! precision of its inputs: f32 for f16/f32 tensors, f64 for f64 tensors.

mod activation;
mod conv;
mod kernels;
mod linear;
mod loss;
mod norm;
mod pool;
mod shuffle;

pub use activation::{relu6, relu6_vjp, Activation};
pub use conv::{conv2d, conv2d_reference, conv2d_vjp, conv2d_vjp_with, ConvGrads, ConvSpec};
pub use linear::{linear, linear_vjp, LinearGrads};
pub use loss::softmax_cross_entropy;
pub use norm::{
    batch_norm, batch_norm_vjp, grn, grn_vjp, BatchNormCache, BatchNormGrads, BatchNormState, GrnGrads,
    GrnState, NormMode, BN_EPS, BN_MOMENTUM, GRN_EPS,
};
pub use pool::{
    adaptive_avg_pool, adaptive_avg_pool_vjp, avg_pool2d, avg_pool2d_vjp, max_pool2d, max_pool2d_vjp,
    pool_output_hw,
};
pub use shuffle::{channel_shuffle, channel_shuffle_vjp, shuffle_permutation};
