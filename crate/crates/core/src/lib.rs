//! Automatic end-to-end quantization of small neural networks.
//!
//! The crate rewrites a computing graph so that every input of an expensive
//! vertex passes through a quantizer, searches which of eight quantizing
//! schemes each quantizer should use, and learns per-quantizer bitwidths
//! under a target average precision.

pub mod distributions;
pub mod error;
pub mod graph;
pub mod pipeline;
pub mod cli;
pub mod qpl;
pub mod qss;
pub mod schemes;
pub mod tensor;

pub use error::{Error, Result};
