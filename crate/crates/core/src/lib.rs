//! Multitask short-term inflow forecasting for three traffic modes.
//!
//! The crate bundles a small reverse-mode autodiff engine ([`autodiff`]), the
//! data pipeline for half-hourly subway/taxi/bus inflow ([`dataflow`]),
//! mode-axis attention with a convolutional query branch ([`attention`]), the
//! residual Transformer model with its ablations and baselines ([`models`]),
//! and training, evaluation and hyperparameter search ([`training`]).
//!
//! Numeric code is generic over [`Scalar`]; the aliases below pin it to
//! `f64`, which is what checkpoints and gradient checks use.

pub mod attention;
pub mod autodiff;
pub mod dataflow;
mod error;
pub mod models;
mod scalar;
pub mod training;

pub use error::{Error, Result};
pub use models::write_atomic;
pub use scalar::Scalar;

pub type Tensor = autodiff::Tensor<f64>;
pub type Graph = autodiff::Graph<f64>;
pub type ParamStore = autodiff::ParamStore<f64>;
pub type Model = models::Model<f64>;
pub type Model32 = models::Model<f32>;
