//! Gaussian expectations of the activation and its derivative.
//!
//! For `(u, v)` jointly Gaussian with unit variances and correlation `ρ`, the
//! normalized ReLU `σ(x) = √2 max(0, x)` gives the arc-cosine kernels
//!
//! ```text
//! E[σ(u)σ(v)] = κ1(ρ) = (√(1 - ρ²) + (π - acos ρ) ρ) / π
//! E[σ'(u)σ'(v)] = κ0(ρ) = (π - acos ρ) / π
//! ```
//!
//! Correlations produced by rounding slightly outside `[-1, 1]` are clamped
//! when they are within [`CLAMP_TOL`]; anything further out is an error.

use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::params::Activation;

/// Slack allowed outside `[-1, 1]` before a correlation is rejected.
pub const CLAMP_TOL: f64 = 1e-12;

/// Clamp `rho` into `[-1, 1]`, rejecting NaN and values beyond [`CLAMP_TOL`].
#[inline]
pub fn clamp_correlation(rho: f64) -> Result<f64> {
    if rho.is_nan() || rho.abs() > 1.0 + CLAMP_TOL {
        return Err(Error::Domain(rho));
    }
    Ok(rho.clamp(-1.0, 1.0))
}

/// `κ1(ρ) = E[σ(u)σ(v)]` for the normalized ReLU.
pub fn dual_activation(rho: f64) -> Result<f64> {
    let rho = clamp_correlation(rho)?;
    Ok(kappa1(rho))
}

/// `κ0(ρ) = E[σ'(u)σ'(v)]` for the normalized ReLU.
pub fn dual_activation_dot(rho: f64) -> Result<f64> {
    let rho = clamp_correlation(rho)?;
    Ok(kappa0(rho))
}

// Callers guarantee rho in [-1, 1].
#[inline]
fn kappa1(rho: f64) -> f64 {
    let s = libm::sqrt((1.0 - rho * rho).max(0.0));
    ((s + (PI - libm::acos(rho)) * rho) / PI).clamp(0.0, 1.0)
}

#[inline]
fn kappa0(rho: f64) -> f64 {
    (PI - libm::acos(rho)) / PI
}

impl Activation {
    /// `E[σ(u)σ(v)]` at unit variances and correlation `rho`.
    pub fn dual(self, rho: f64) -> Result<f64> {
        let rho = clamp_correlation(rho)?;
        Ok(match self {
            Activation::NormalizedRelu => kappa1(rho),
            Activation::Linear => rho,
        })
    }

    /// `E[σ'(u)σ'(v)]` at unit variances and correlation `rho`.
    pub fn dual_dot(self, rho: f64) -> Result<f64> {
        let rho = clamp_correlation(rho)?;
        Ok(match self {
            Activation::NormalizedRelu => kappa0(rho),
            Activation::Linear => 1.0,
        })
    }

    /// Both expectations for a general 2×2 covariance `[[var_x, cov], [cov, var_y]]`.
    ///
    /// Both activations are positively homogeneous of degree one, so
    /// `E[σσ] = √(var_x var_y) · dual(c)` and `E[σ'σ'] = dual_dot(c)` with
    /// `c = cov / √(var_x var_y)`. A zero variance gives `(0, dual_dot(0))`.
    pub fn expectations(self, cov: f64, var_x: f64, var_y: f64) -> Result<(f64, f64)> {
        if !(var_x >= 0.0 && var_y >= 0.0) {
            return Err(Error::InvalidParams("variances must be non-negative"));
        }
        let scale = libm::sqrt(var_x * var_y);
        if scale == 0.0 {
            return Ok((0.0, self.dual_dot(0.0)?));
        }
        let c = cov / scale;
        Ok((scale * self.dual(c)?, self.dual_dot(c)?))
    }
}
