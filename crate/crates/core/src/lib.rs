//! Federated multi-task risk modelling for surgical outcomes on synthetic
//! multi-site cohorts.

pub mod cohort;
pub mod error;
pub mod experiment;
pub mod fed;
pub mod metrics;
pub mod model;
pub mod personalize;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod wire;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision tensor used throughout training.
pub type Tensor64 = tensor::Tensor<f64>;
pub type Params = tensor::ModelParams<f64>;
