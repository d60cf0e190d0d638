//! SFANet: spatial-frequency dual-mixer forecasting for gridded sequences.
//!
//! The crate is layered bottom-up:
//! - [`tensor`] / [`graph`]: dense f64 arrays and tape-based reverse-mode
//!   differentiation (conv, group norm, FFT, pooling mixer, attention
//!   building blocks).
//! - [`params`]: named parameter registry shared by model and optimizer.
//! - [`mixers`] / [`sfa`]: the two token mixers and the attention fusion
//!   that joins their branches.
//! - [`model`]: encoder -> temporal predictor -> decoder pipeline plus
//!   checkpointing.
//! - [`data`] / [`metrics`] / [`train`]: synthetic sequence generators, the
//!   forecast-quality metric suite, and the AdamW training harness.

pub mod data;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod mixers;
pub mod model;
pub mod params;
pub mod sfa;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{ComplexTensor, Tensor};
