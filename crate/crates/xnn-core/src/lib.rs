//! Layer-stress learning head (x-NN).
//!
//! A deep classifier that taps feature vectors from every depth of a stack of
//! fully connected blocks, fuses the taps with multi-head self-attention so
//! training decides which depth to stress, and exposes the learned attention
//! distribution for inspection. Ships with a matched last-layer-only control
//! model, a training/evaluation harness, CSV and synthetic data sources, and
//! attention export.

pub mod autodiff;
pub mod baseline;
pub mod checkpoint;
pub mod data;
pub mod model;
pub mod train;
pub mod error;
pub mod introspect;

pub use error::{Error, Result};
