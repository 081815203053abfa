//! Latent SDE–RNN models with attention on the pre-RNN state, for irregularly
//! sampled and partially observed time series.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision for the common cases.

// Tape ops return `Result`, so they are methods rather than operator traits;
// negated float comparisons are how validation rejects NaN.
#![allow(clippy::should_implement_trait, clippy::neg_cmp_op_on_partial_ord)]

pub mod attention;
pub mod data;
pub mod error;
pub mod model;
pub mod nn;
pub mod optim;
pub mod scalar;
pub mod sde;
pub mod seed;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Tape64 = tensor::Tape<f64>;
pub type Tape32 = tensor::Tape<f32>;
pub type ParameterStore64 = nn::ParameterStore<f64>;
pub type ParameterStore32 = nn::ParameterStore<f32>;
pub type BrownianPath64 = sde::BrownianPath<f64>;
pub type BrownianPath32 = sde::BrownianPath<f32>;
pub type Adam64 = optim::Adam<f64>;
pub type Adam32 = optim::Adam<f32>;
