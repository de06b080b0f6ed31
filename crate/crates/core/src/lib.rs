//! Kernel mathematics for deep equilibrium networks in the infinite-width limit.
//!
//! Everything here is a pure function of its arguments and builds without
//! `std` (only `alloc` is needed), so the same code runs inside the CLI,
//! in parallel workers, or on targets without an operating system.
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`dual`] | normalized-ReLU / linear dual activations |
//! | [`ntk`] | covariance map, finite-depth NTK recursion, DEQ-of-NTK fixed point |
//! | [`cdeq`] | convolutional DEQ-NTK: patch-trace operator, normalizer, fixed points |
//! | [`spectra`] | limiting spectrum of `(I - A)^T (I - A)` via its Stieltjes transform |
//! | [`quad`] | adaptive Simpson quadrature |

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod cdeq;
pub mod dual;
mod error;
pub mod ntk;
mod params;
pub mod quad;
pub mod spectra;

pub use error::{Error, Result};
pub use params::{Activation, KernelParams, DEQ_INIT_TOL};
