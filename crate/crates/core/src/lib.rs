//! Patch-based CNN segmentation with separately trained per-class networks
//! merged into one two-branch model over a shared convolutional primary.

pub mod bifurcated;
pub mod dataset;
pub mod error;
pub mod fusion;
pub mod imaging;
pub mod metrics;
pub mod pipeline;
pub mod tensor;

pub use error::{Error, Result};
