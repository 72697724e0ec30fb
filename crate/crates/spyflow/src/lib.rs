//! Coarse-to-fine spatial-pyramid residual optical flow.
//!
//! The crate provides the differentiable kernels (`nn`), the sampling
//! operators (`pyramid`), the level networks and pyramid inference
//! (`model`), sequential per-level training (`trainer`), flow/image data
//! plumbing and synthetic data generation (`data`), and evaluation metrics
//! (`eval`).

pub mod data;
pub mod error;
pub mod eval;
pub mod flow;
pub mod model;
pub mod nn;
pub mod pyramid;
pub mod reference;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use flow::FlowField;
pub use tensor::Tensor;
