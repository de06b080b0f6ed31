//! Experiment layer on top of `deqntk-core`: finite-width equilibrium
//! networks, Gram matrices and kernel regression, dataset loaders, run
//! configuration and CSV reporting.

pub mod config;
pub mod data;
pub mod empirical;
mod error;
pub mod experiments;
pub mod gram;
pub mod report;
pub mod rng;

pub use error::{Error, Result};
