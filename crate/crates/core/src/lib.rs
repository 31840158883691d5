//! Diagnostic image quality classification on synthetic motion-corrupted
//! MR-like images.

pub mod dataset;
pub mod error;
pub mod harness;
pub mod kspace;
pub mod metrics;
pub mod nn;
pub mod pgm;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Dims, Real, Tensor4};
