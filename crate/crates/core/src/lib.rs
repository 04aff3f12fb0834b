//! Multi-scale attention U-Net building blocks.
//!
//! Everything here is pure computation over in-memory tensors: convolution
//! and transposed-convolution layers with explicit backward passes, the
//! additive attention gate, the multi-scale and single-scale attention
//! upsampling blocks, the encoder/decoder assembly, the compound
//! segmentation loss, confusion-matrix metrics and first-order optimizers.
//!
//! The crate is `no_std` (with `alloc`). File formats, datasets, the
//! training driver and the command line live in the `msaunet` crate.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod attention;
pub mod decoder;
pub mod encoder;
mod error;
mod gemm;
pub mod init;
pub mod loss;
pub mod metrics;
pub mod network;
pub mod nn;
pub mod optim;
pub mod params;
pub mod tensor;

pub use error::{Error, Result};
pub use params::{Param, Parameterized};
pub use tensor::{ClassMask, FeatureMap};
