//! Segmentation toolkit around the multi-scale attention U-Net in
//! [`msaunet_core`]: dataset loading, training, checkpoints, mask output and
//! the `msaunet` command line.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
mod error;
pub mod palette;
pub mod train;

pub use error::{Error, Result, EXIT_NUMERIC, EXIT_USAGE};
pub use msaunet_core as core;
