//! Covariance map, finite-depth NTK recursion and the DEQ-of-NTK fixed point.
//!
//! The network is `f^(h) = σ_W W g^(h-1) + σ_U U x + σ_b b`, `g^(h) = σ(f^(h))`
//! with a readout of variance `σ_v²`. Kernels are functions of `dot = xᵀy`
//! for unit-norm inputs. The diagonal variance `q^(h)` is tracked so that
//! parameters outside the DEQ-NTK initialization (e.g. no injection) are exact;
//! under that initialization `q ≡ 1`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::params::KernelParams;

/// Root-finder tolerance on the covariance residual.
pub const ROOT_TOL: f64 = 1e-12;
/// Root-finder iteration cap.
pub const ROOT_MAX_ITER: usize = 200;
/// `|1 - Σ̇*|` below this is reported as singular.
pub const SINGULAR_TOL: f64 = 1e-14;

/// Pair quantities after `depth` hidden layers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairKernelState {
    /// Correlation `Σ^(d) / q^(d)`.
    pub rho: f64,
    /// Covariance `Σ^(d)(x, y)`.
    pub sigma: f64,
    /// Diagonal variance `Σ^(d)(x, x)`.
    pub variance: f64,
    /// `Σ̇^(d)`; equals 1 at depth 0 by convention.
    pub sigma_dot: f64,
    /// Hidden-layer NTK `Θ^(d)` before the readout.
    pub theta: f64,
    /// NTK of the full network including the readout layer.
    pub output: f64,
    pub depth: usize,
}

/// DEQ-of-NTK quantities at the fixed point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointResult {
    /// Fixed-point covariance `Σ*`; equal to the correlation `ρ*` under DEQ-NTK init.
    pub rho_star: f64,
    /// `E[σ'σ'] = κ0(ρ*)`.
    pub rho_dot_star: f64,
    /// `σ_W² ρ̇*`.
    pub sigma_dot_star: f64,
    /// Fixed-point diagonal variance `q*`.
    pub variance: f64,
    pub theta: f64,
    pub iterations: usize,
    pub residual: f64,
}

/// One step of the covariance map at correlation `rho` and unit variance:
/// `σ_W² E[σ(u)σ(v)] + σ_U² dot + σ_b²`.
pub fn r_sigma(rho: f64, dot: f64, params: &KernelParams) -> Result<f64> {
    Ok(params.sigma_w_sq * params.activation.dual(rho)? + params.sigma_u_sq * dot + params.sigma_b_sq)
}

fn check_dot(dot: f64) -> Result<f64> {
    crate::dual::clamp_correlation(dot)
}

/// NTK of a depth-`d` network with input injection at every layer.
///
/// `Σ^(0) = Θ^(0) = dot`, then for `h = 1..=d`
/// `Σ^(h) = σ_W² q E[σσ] + σ_U² dot + σ_b²`, `Σ̇^(h) = σ_W² E[σ'σ']`,
/// `Θ^(h) = Σ̇^(h) Θ^(h-1) + Σ^(h)`; the readout adds `σ_v²` dual terms.
pub fn finite_depth_ntk(dot: f64, depth: usize, params: &KernelParams) -> Result<PairKernelState> {
    params.validate()?;
    let dot = check_dot(dot)?;
    let act = params.activation;
    let mut q = 1.0;
    let mut sigma = dot;
    let mut sigma_dot = 1.0;
    let mut theta = dot;
    for _ in 0..depth {
        let (e, e_dot) = act.expectations(sigma, q, q)?;
        sigma = params.sigma_w_sq * e + params.sigma_u_sq * dot + params.sigma_b_sq;
        sigma_dot = params.sigma_w_sq * e_dot;
        q = params.next_variance(q);
        theta = sigma_dot * theta + sigma;
    }
    let (e, e_dot) = act.expectations(sigma, q, q)?;
    Ok(PairKernelState {
        rho: if q > 0.0 { sigma / q } else { 0.0 },
        sigma,
        variance: q,
        sigma_dot,
        theta,
        output: params.sigma_v_sq * (e_dot * theta + e),
        depth,
    })
}

struct Root {
    corr: f64,
    iterations: usize,
    residual: f64,
}

/// Safeguarded Newton on `F(c) = R(q c)/q - c` over `c ∈ [-1, 1]`.
///
/// `F(-1) ≥ 0 ≥ F(1)` whenever `|dot| ≤ 1`, so the bracket is always valid.
fn solve_correlation(dot: f64, q: f64, params: &KernelParams) -> Result<Root> {
    let act = params.activation;
    let offset = (params.sigma_u_sq * dot + params.sigma_b_sq) / q;
    let f = |c: f64| -> Result<f64> { Ok(params.sigma_w_sq * act.dual(c)? + offset - c) };
    let df = |c: f64| -> Result<f64> { Ok(params.sigma_w_sq * act.dual_dot(c)? - 1.0) };

    // Roots on the boundary (e.g. dot = 1 under DEQ-NTK init) are taken exactly;
    // κ0 has infinite slope at ±1, so an interior approximation would cost accuracy.
    for end in [1.0, -1.0] {
        let fe = f(end)?;
        if fe * end >= 0.0 {
            return Ok(Root { corr: end, iterations: 0, residual: (fe * q).abs() });
        }
    }
    let (mut lo, mut hi) = (-1.0f64, 1.0f64);
    let mut c = offset.clamp(-1.0, 1.0);
    let mut fc = f(c)?;
    let mut iterations = 0;
    // Newton converges quadratically, so run it until the step stalls rather
    // than stopping at the first iterate inside the tolerance.
    while iterations < ROOT_MAX_ITER && fc != 0.0 {
        iterations += 1;
        if fc > 0.0 {
            lo = c;
        } else {
            hi = c;
        }
        let d = df(c)?;
        let newton = c - fc / d;
        let next = if d < 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        let step = (next - c).abs();
        c = next;
        fc = f(c)?;
        if step <= 4.0 * f64::EPSILON || hi - lo <= 4.0 * f64::EPSILON {
            break;
        }
    }
    let residual = (fc * q).abs();
    if residual <= ROOT_TOL {
        Ok(Root { corr: c, iterations, residual })
    } else {
        Err(Error::NoConvergence { what: "fixed-point correlation", iterations, residual })
    }
}

/// Fixed-point covariance `Σ*` of the infinite-depth map, i.e. the root of `R(ρ) - ρ`.
///
/// Under DEQ-NTK initialization `q* = 1` and this is the correlation `ρ*`.
pub fn solve_rho_star(dot: f64, params: &KernelParams) -> Result<f64> {
    params.require_contractive()?;
    let dot = check_dot(dot)?;
    let q = params.fixed_variance();
    Ok(q * solve_correlation(dot, q, params)?.corr)
}

/// DEQ-of-NTK `Θ = σ_v² ρ̇* Σ* / (1 - Σ̇*) + σ_v² q* E[σσ]`.
pub fn theta_deq(dot: f64, params: &KernelParams) -> Result<FixedPointResult> {
    params.require_contractive()?;
    let dot = check_dot(dot)?;
    let q = params.fixed_variance();
    let root = solve_correlation(dot, q, params)?;
    let act = params.activation;
    let rho_dot_star = act.dual_dot(root.corr)?;
    let sigma_dot_star = params.sigma_w_sq * rho_dot_star;
    let gap = 1.0 - sigma_dot_star;
    if gap.abs() < SINGULAR_TOL {
        return Err(Error::Singular(gap));
    }
    let sigma_star = q * root.corr;
    let theta = params.sigma_v_sq * (rho_dot_star * sigma_star / gap + q * act.dual(root.corr)?);
    Ok(FixedPointResult {
        rho_star: sigma_star,
        rho_dot_star,
        sigma_dot_star,
        variance: q,
        theta,
        iterations: root.iterations,
        residual: root.residual,
    })
}

/// Readout values `σ_v²(κ0 Θ^(d) + κ1)` at several depths from one pass of the
/// recursion. Output order follows `depths`, which need not be sorted.
pub fn finite_depth_outputs(dot: f64, depths: &[usize], params: &KernelParams) -> Result<Vec<f64>> {
    params.validate()?;
    let dot = check_dot(dot)?;
    let act = params.activation;
    let max = depths.iter().copied().max().unwrap_or(0);
    let mut out = vec![0.0; depths.len()];
    let (mut q, mut sigma, mut theta) = (1.0, dot, dot);
    for h in 0..=max {
        if h > 0 {
            let (e, e_dot) = act.expectations(sigma, q, q)?;
            sigma = params.sigma_w_sq * e + params.sigma_u_sq * dot + params.sigma_b_sq;
            q = params.next_variance(q);
            theta = params.sigma_w_sq * e_dot * theta + sigma;
        }
        if depths.contains(&h) {
            let (e, e_dot) = act.expectations(sigma, q, q)?;
            let value = params.sigma_v_sq * (e_dot * theta + e);
            depths.iter().zip(out.iter_mut()).filter(|(d, _)| **d == h).for_each(|(_, o)| *o = value);
        }
    }
    Ok(out)
}

/// Closed-form NTK of the linear DEQ: `σ_v²σ_U² dot / (1-σ_W²)² + σ_v²σ_U² dot / (1-σ_W²)`.
pub fn theta_linear_deq(dot: f64, params: &KernelParams) -> Result<f64> {
    params.validate()?;
    if params.sigma_w_sq >= 1.0 {
        return Err(Error::NotContractive(params.sigma_w_sq));
    }
    let g = 1.0 - params.sigma_w_sq;
    let a = params.sigma_v_sq * params.sigma_u_sq * dot;
    Ok(a / (g * g) + a / g)
}

/// Convenience wrapper selecting the finite-depth or fixed-point kernel.
pub fn kernel_value(dot: f64, depth: Option<usize>, params: &KernelParams) -> Result<f64> {
    match depth {
        Some(d) => Ok(finite_depth_ntk(dot, d, params)?.output),
        None => Ok(theta_deq(dot, params)?.theta),
    }
}
