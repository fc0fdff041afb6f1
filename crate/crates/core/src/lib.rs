//! Collaborative learning of shared latent states across multivariate
//! physiological time series.
//!
//! An LSTM encoder maps each patient's minute-resolution vitals to one
//! embedding per timestamp. Training pushes the cosine similarity between
//! timestamps of two patients towards the outer product of their ±1 state
//! labels; inference recovers a test patient's state scores by least squares
//! against annotated reference patients.

pub mod autodiff;
pub mod baselines;
pub mod config;
pub mod datagen;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod inference;
pub mod linalg;
pub mod objective;
pub mod preprocess;
pub mod trainer;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
