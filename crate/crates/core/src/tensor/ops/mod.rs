//! Differentiable primitives. Every op validates shapes, computes its
//! forward value, and records an adjoint entry on the tape when recording
//! is on and some input requires gradients.

mod conv;
mod corr;
mod elem;
pub(crate) mod record;
mod resample;

pub use conv::{conv2d, conv2d_out_dims, conv_transpose2d, conv_transpose2d_out_dims};
pub use corr::match_scale;
pub use elem::{
    abs, add, affine, clamp01, concat_channels, leaky_relu, mul, pad_hw, reduce_mean, scale,
    sigmoid, slice_channels, sub,
};
pub use elem::crop_hw;
pub use resample::{avg_pool2, grid_sample, resize_bilinear};
