//! Probabilistic time-series forecasting by rendering series as images and
//! reconstructing the future half with a masked-autoencoder vision model.
//!
//! The pipeline: normalize a context window into pixel range, reject samples
//! whose values cannot be encoded ([`filtering`]), fold each variate by its
//! period and paint it into an RGB canvas ([`converter`]), reconstruct the
//! masked right half with a small vision transformer carrying one output head
//! per quantile level ([`backbone`]), and read the forecasts back out of the
//! reconstructed image. [`training`] fits the model with a pinball objective,
//! [`evaluation`] scores forecasts against naive baselines.

// Validation guards deliberately write `!(x > 0.0)` so that NaN fails the
// check alongside out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod archive;
pub mod backbone;
pub mod config;
pub mod converter;
pub mod domain;
pub mod error;
pub mod evaluation;
pub mod filtering;
pub mod pipeline;
pub mod plot;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
