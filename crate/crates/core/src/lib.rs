//! Adaptive convolutional forecasting engine.
//!
//! End-to-end pipeline for multivariate time series: per-variable
//! normalization and wavelet threshold denoising, multi-resolution dilated
//! temporal features, gated deformable nonlinear features, and a single
//! hidden layer readout solved in closed form by a Moore-Penrose
//! pseudo-inverse. A rolling evaluation harness and a dynamic retraining
//! loop sit on top.

// The numeric kernels walk several arrays in lockstep and branch on parity
// and bounds; indexed loops and explicit comparisons are the clearer form
// there.
#![allow(clippy::needless_range_loop)]
#![allow(clippy::manual_is_multiple_of)]
#![allow(clippy::manual_range_contains)]

pub mod autodiff;
pub mod config;
pub mod datasets;
pub mod deform;
pub mod error;
pub mod evalstats;
pub mod kernels;
pub mod linalg;
pub mod persist;
pub mod pipeline;
pub mod preprocess;
pub mod readout;
pub mod rng;
pub mod temporal;
pub mod tensor;
pub mod wavelet;

pub use error::{Error, Result};
pub use tensor::Tensor;
