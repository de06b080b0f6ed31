//! Finite-width equilibrium networks.
//!
//! Weights are stored as raw `N(0, 1)` draws and scaled where they are used,
//! in the NTK parametrization
//!
//! ```text
//! z = σ(A z + σ_U U x + σ_b b),   A = √(σ_W²/n) W,   f(x) = √(σ_v²/n) vᵀ z*
//! ```
//!
//! Gradients of `f` follow from the implicit function theorem through the
//! adjoint `p = D (I - Aᵀ D)⁻¹ c` with `D = diag σ'(pre-activation)` and
//! `c = √(σ_v²/n) v`.

mod finite;
mod resolvent;

pub use finite::{finite_depth_empirical_ntk, LayerWeights};
pub use resolvent::{empirical_spectrum, linear_resolvent_stats, operator_norm, spectral_norm_estimate};

use deqntk_core::{Activation, KernelParams};
use faer::linalg::solvers::Solve;
use faer::{Col, Mat};

use crate::error::{Error, Result};
use crate::rng::{normals, Block};

/// Forward-solver settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardOptions {
    /// Stop when `‖σ(pre(z)) - z‖ / (1 + ‖z‖) ≤ tol`.
    pub tol: f64,
    pub max_iter: usize,
    /// Mix `z ← (1 - β) z + β σ(pre(z))`; `β = 1` is plain iteration.
    pub damping: f64,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 10_000, damping: 1.0 }
    }
}

/// Raw weights of one weight-tied network.
#[derive(Debug, Clone)]
pub struct DeqWeights {
    pub w: Mat<f64>,
    pub u: Mat<f64>,
    pub b: Col<f64>,
    pub v: Col<f64>,
    pub params: KernelParams,
    pub seed: u64,
    pub trial: u32,
}

pub(crate) fn mat_from_stream(seed: u64, trial: u32, block: Block, layer: u32, rows: usize, cols: usize) -> Mat<f64> {
    let raw = normals(seed, trial, block, layer, rows * cols);
    Mat::from_fn(rows, cols, |i, j| raw[i * cols + j])
}

pub(crate) fn col_from_stream(seed: u64, trial: u32, block: Block, layer: u32, len: usize) -> Col<f64> {
    let raw = normals(seed, trial, block, layer, len);
    Col::from_fn(len, |i| raw[i])
}

impl DeqWeights {
    /// Draw weights for width `n` and input dimension `m`. Matrices are filled
    /// row-major from their own streams (see [`crate::rng`]).
    pub fn sample(n: usize, m: usize, params: KernelParams, seed: u64, trial: u32) -> Self {
        Self {
            w: mat_from_stream(seed, trial, Block::W, 0, n, n),
            u: mat_from_stream(seed, trial, Block::U, 0, n, m),
            b: col_from_stream(seed, trial, Block::B, 0, n),
            v: col_from_stream(seed, trial, Block::V, 0, n),
            params,
            seed,
            trial,
        }
    }

    pub fn width(&self) -> usize {
        self.w.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.u.ncols()
    }

    /// `√(σ_W²/n)`.
    pub fn w_scale(&self) -> f64 {
        (self.params.sigma_w_sq / self.width() as f64).sqrt()
    }

    /// `√(σ_v²/n)`.
    pub fn v_scale(&self) -> f64 {
        (self.params.sigma_v_sq / self.width() as f64).sqrt()
    }

    /// `A = √(σ_W²/n) W`.
    pub fn recurrent(&self) -> Mat<f64> {
        let a = self.w_scale();
        Mat::from_fn(self.width(), self.width(), |i, j| a * self.w[(i, j)])
    }

    /// Input-dependent part of the pre-activation, `σ_U U x + σ_b b`.
    pub fn injection(&self, x: &[f64]) -> Result<Col<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::Config(format!("input has length {}, network expects {}", x.len(), self.input_dim())));
        }
        let xc = Col::from_fn(x.len(), |i| x[i]);
        let su = self.params.sigma_u_sq.sqrt();
        let sb = self.params.sigma_b_sq.sqrt();
        let ux = &self.u * &xc;
        Ok(Col::from_fn(self.width(), |i| su * ux[i] + sb * self.b[i]))
    }

    /// Network output `√(σ_v²/n) vᵀ z`.
    pub fn readout(&self, z: &Col<f64>) -> f64 {
        self.v_scale() * dot(&self.v, z)
    }
}

#[inline]
pub(crate) fn activate(act: Activation, x: f64) -> f64 {
    match act {
        Activation::NormalizedRelu => std::f64::consts::SQRT_2 * x.max(0.0),
        Activation::Linear => x,
    }
}

#[inline]
pub(crate) fn activate_dot(act: Activation, x: f64) -> f64 {
    match act {
        Activation::NormalizedRelu => {
            if x > 0.0 {
                std::f64::consts::SQRT_2
            } else {
                0.0
            }
        }
        Activation::Linear => 1.0,
    }
}

pub(crate) fn dot(a: &Col<f64>, b: &Col<f64>) -> f64 {
    (0..a.nrows()).map(|i| a[i] * b[i]).sum()
}

fn norm(a: &Col<f64>) -> f64 {
    dot(a, a).sqrt()
}

/// Fixed point `z*` of one forward solve.
#[derive(Debug, Clone)]
pub struct EquilibriumState {
    pub z_star: Col<f64>,
    /// Pre-activation `A z* + σ_U U x + σ_b b`.
    pub pre: Col<f64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Solve `z = σ(A z + σ_U U x + σ_b b)` by (optionally damped) fixed-point iteration from `z = 0`.
pub fn deq_forward(weights: &DeqWeights, x: &[f64], opts: &ForwardOptions) -> Result<EquilibriumState> {
    let act = weights.params.activation;
    let inj = weights.injection(x)?;
    let a = weights.w_scale();
    let n = weights.width();
    let beta = opts.damping;
    let mut z = Col::<f64>::zeros(n);
    for it in 0..=opts.max_iter {
        let wz = &weights.w * &z;
        let pre = Col::from_fn(n, |i| a * wz[i] + inj[i]);
        let image = Col::from_fn(n, |i| activate(act, pre[i]));
        let diff = Col::from_fn(n, |i| image[i] - z[i]);
        let residual = norm(&diff) / (1.0 + norm(&image));
        if residual <= opts.tol {
            return Ok(EquilibriumState { z_star: image, pre, residual, iterations: it });
        }
        if it == opts.max_iter || !residual.is_finite() {
            return Err(Error::NoConvergence { what: "equilibrium forward solve", iterations: it, residual });
        }
        z = Col::from_fn(n, |i| (1.0 - beta) * z[i] + beta * image[i]);
    }
    unreachable!("loop returns on its last iteration")
}

/// Adjoint vector `p = D (I - Aᵀ D)⁻¹ c` at an equilibrium.
pub fn adjoint(weights: &DeqWeights, state: &EquilibriumState) -> Result<Col<f64>> {
    let act = weights.params.activation;
    let n = weights.width();
    let a = weights.w_scale();
    let d: Vec<f64> = (0..n).map(|i| activate_dot(act, state.pre[i])).collect();
    // J = I - Aᵀ D, i.e. J_ij = δ_ij - a W_ji d_j.
    let j = Mat::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 } - a * weights.w[(c, r)] * d[c]);
    let cvec = Col::from_fn(n, |i| weights.v_scale() * weights.v[i]);
    let t = j.partial_piv_lu().solve(&cvec);
    if (0..n).any(|i| !t[i].is_finite()) {
        return Err(Error::Singular { condition: f64::INFINITY });
    }
    Ok(Col::from_fn(n, |i| d[i] * t[i]))
}

/// Gradient of the network output with respect to each raw weight block.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub w: Mat<f64>,
    pub u: Mat<f64>,
    pub b: Col<f64>,
    pub v: Col<f64>,
}

/// `∂f/∂W = √(σ_W²/n) p z*ᵀ`, `∂f/∂U = σ_U p xᵀ`, `∂f/∂b = σ_b p`, `∂f/∂v = √(σ_v²/n) z*`.
pub fn gradients(weights: &DeqWeights, x: &[f64], state: &EquilibriumState) -> Result<Gradients> {
    let p = adjoint(weights, state)?;
    let n = weights.width();
    let a = weights.w_scale();
    let su = weights.params.sigma_u_sq.sqrt();
    let sb = weights.params.sigma_b_sq.sqrt();
    let vs = weights.v_scale();
    Ok(Gradients {
        w: Mat::from_fn(n, n, |i, j| a * p[i] * state.z_star[j]),
        u: Mat::from_fn(n, x.len(), |i, j| su * p[i] * x[j]),
        b: Col::from_fn(n, |i| sb * p[i]),
        v: Col::from_fn(n, |i| vs * state.z_star[i]),
    })
}

/// Empirical NTK split by parameter block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmpiricalNtkBreakdown {
    pub w_term: f64,
    pub u_term: f64,
    pub b_term: f64,
    pub v_term: f64,
    pub total: f64,
}

impl EmpiricalNtkBreakdown {
    pub fn new(w_term: f64, u_term: f64, b_term: f64, v_term: f64) -> Self {
        Self { w_term, u_term, b_term, v_term, total: w_term + u_term + b_term + v_term }
    }
}

/// Per-input quantities the NTK inner product needs.
#[derive(Debug, Clone)]
pub struct IftSide {
    pub state: EquilibriumState,
    pub p: Col<f64>,
}

pub fn ift_side(weights: &DeqWeights, x: &[f64], opts: &ForwardOptions) -> Result<IftSide> {
    let state = deq_forward(weights, x, opts)?;
    let p = adjoint(weights, &state)?;
    Ok(IftSide { state, p })
}

/// Gradient inner product `⟨∂f/∂θ(x), ∂f/∂θ(y)⟩` from two solved sides.
pub fn ntk_from_sides(weights: &DeqWeights, xy: f64, sx: &IftSide, sy: &IftSide) -> EmpiricalNtkBreakdown {
    let n = weights.width() as f64;
    let pp = dot(&sx.p, &sy.p);
    let zz = dot(&sx.state.z_star, &sy.state.z_star);
    let prm = &weights.params;
    EmpiricalNtkBreakdown::new(
        prm.sigma_w_sq / n * pp * zz,
        prm.sigma_u_sq * pp * xy,
        prm.sigma_b_sq * pp,
        prm.sigma_v_sq / n * zz,
    )
}

/// Empirical NTK of the equilibrium network at `(x, y)` via implicit differentiation.
pub fn ift_ntk_pair(
    weights: &DeqWeights,
    x: &[f64],
    y: &[f64],
    opts: &ForwardOptions,
) -> Result<EmpiricalNtkBreakdown> {
    let sx = ift_side(weights, x, opts)?;
    let sy = ift_side(weights, y, opts)?;
    let xy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    Ok(ntk_from_sides(weights, xy, &sx, &sy))
}
