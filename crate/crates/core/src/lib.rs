//! Bayesian hidden Markov model for forecasting the final collision risk of
//! satellite conjunction events from their sequence of warning messages.

pub mod diagnostics;
pub mod dists;
pub mod domain;
pub mod error;
pub mod evaluation;
pub mod hmm;
pub mod pipeline;
pub mod posterior;
pub mod reparam;
pub mod sampler;
pub mod synth;

#[cfg(test)]
mod testkit;

pub use error::{Error, Result};
