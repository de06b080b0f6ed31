use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("correlation {0} is outside [-1, 1]")]
    Domain(f64),

    #[error("invalid kernel parameters: {0}")]
    InvalidParams(&'static str),

    #[error("fixed point requires sigma_w_sq < 1, got {0}")]
    NotContractive(f64),

    #[error("{what} did not converge in {iterations} iterations (residual {residual:e})")]
    NoConvergence { what: &'static str, iterations: usize, residual: f64 },

    #[error("1 - sigma_dot* = {0:e} is numerically zero; the kernel is singular")]
    Singular(f64),

    #[error("invalid filter size q={q} for a {p}x{width} image")]
    InvalidFilter { q: usize, p: usize, width: usize },

    #[error("tensor shape mismatch: expected {expected} entries, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("pixel ({i},{j}) channel vector has norm {norm}, expected 1")]
    NotUnitPixel { i: usize, j: usize, norm: f64 },

    #[error("2x2 covariance at ({index}) is not PSD: det = {det:e}")]
    NotPsd { index: usize, det: f64 },

    #[error("no Stieltjes root in the upper half plane at z = {re} + {im}i")]
    NoUpperRoot { re: f64, im: f64 },

    #[error("argument out of range: {0}")]
    OutOfRange(&'static str),
}
