//! Layers with explicit forward and backward passes.
//!
//! Layers operate on batches (`&[FeatureMap]`). Forward passes borrow the
//! layer immutably and return whatever the backward pass needs; backward
//! passes accumulate parameter gradients into [`crate::Param::grad`] and
//! return the gradient with respect to the layer input.

mod activation;
mod block;
mod conv;
mod norm;
mod resample;

pub use activation::{leaky_relu, leaky_relu_backward_from_output, relu, sigmoid, LEAKY_SLOPE};
pub use block::{ConvBnAct, ConvBnActCache, ConvKind};
pub use conv::{transposed_padding, Conv2d, ConvTranspose2d};
pub use norm::{BatchNorm2d, BnCache, NormMode, BN_EPS, BN_MOMENTUM};
pub use resample::{bilinear_resample, bilinear_resample_backward};
