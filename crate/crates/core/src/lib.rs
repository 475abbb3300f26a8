//! Gridded multi-decadal trend forecasting.
//!
//! Per-gridpoint linear trends from monthly fields feed per-region regression
//! networks that map an ensemble of model trends onto observed trends. The
//! crate also covers spatial segmentation, Monte Carlo dropout uncertainty,
//! Shapley attribution of the input models and a weighted evaluation harness.

pub mod error;
pub mod evalmetrics;
pub mod explain;
pub mod grid;
pub mod neuralnet;
pub mod pipeline;
pub mod rng;
pub mod segmentation;
pub mod trend;
pub mod uncertainty;

pub use error::{Error, Result};
