//! Numeric kernels over [`Tensor`](crate::Tensor). All are pure functions;
//! accumulation order is fixed so results are reproducible bit for bit.

mod conv;
mod pointwise;
mod resize;
mod xcorr;

pub(crate) use conv::conv2d_backward_impl;
pub use conv::{conv2d, conv2d_backward, output_extent, ConvSpec};
pub use pointwise::{add, relu, relu_backward, scale_shift, scale_shift_backward};
pub use resize::{resize_trilinear, resize_trilinear_backward};
pub use xcorr::{channel_sum, depthwise_xcorr, depthwise_xcorr_backward};
