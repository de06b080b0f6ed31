//! Single-trial building blocks shared by the CLI and the test suites.

use deqntk_core::ntk::{theta_deq, theta_linear_deq};
use deqntk_core::spectra::SpectralDensitySamples;
use deqntk_core::{Activation, KernelParams};

use crate::empirical::{
    empirical_spectrum, ift_ntk_pair, linear_resolvent_stats, spectral_norm_estimate, DeqWeights, ForwardOptions,
};
use crate::error::Result;
use crate::rng::unit_vector;

/// Kolmogorov distance between the empirical CDF of ascending `eigs` and a limiting CDF.
pub fn ecdf_sup_distance(eigs: &[f64], limit: &SpectralDensitySamples) -> f64 {
    let n = eigs.len() as f64;
    eigs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = limit.cdf(x);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

/// Unit vectors `x, y` of dimension `m ≥ 2` with `xᵀy = dot`, built from a
/// seeded random orthonormal pair.
pub fn input_pair(seed: u64, m: usize, dot: f64) -> (Vec<f64>, Vec<f64>) {
    let u = unit_vector(seed, 0, m);
    let mut w = unit_vector(seed, 1, m);
    let proj: f64 = u.iter().zip(&w).map(|(a, b)| a * b).sum();
    w.iter_mut().zip(&u).for_each(|(b, a)| *b -= proj * a);
    let nw = w.iter().map(|b| b * b).sum::<f64>().sqrt();
    let s = (1.0 - dot * dot).max(0.0).sqrt();
    let y = u.iter().zip(&w).map(|(a, b)| dot * a + s * b / nw).collect();
    (u, y)
}

/// One width trial: empirical NTK `Θ_n` of a width-`n` network against the
/// limiting kernel `Θ` at the same input pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualTrial {
    pub width: usize,
    pub trial: u32,
    pub theta_n: f64,
    pub theta: f64,
    pub relative_residue: f64,
}

pub fn residual_trial(
    width: usize,
    input_dim: usize,
    dot: f64,
    params: &KernelParams,
    seed: u64,
    trial: u32,
    opts: &ForwardOptions,
) -> Result<ResidualTrial> {
    let (x, y) = input_pair(seed, input_dim, dot);
    let theta = match params.activation {
        Activation::Linear => theta_linear_deq(dot, params)?,
        Activation::NormalizedRelu => theta_deq(dot, params)?.theta,
    };
    let weights = DeqWeights::sample(width, input_dim, *params, seed, trial);
    let theta_n = ift_ntk_pair(&weights, &x, &y, opts)?.total;
    Ok(ResidualTrial { width, trial, theta_n, theta, relative_residue: ((theta - theta_n) / theta).abs() })
}

/// Median of a nonempty slice.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// One trace trial of the linear network with `σ_U² = 1 - σ_W²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceTrial {
    pub trial: u32,
    pub trace: f64,
    /// Power-iteration estimate of `‖A‖_op`.
    pub op_norm: f64,
}

fn linear_params(sigma_w_sq: f64) -> Result<KernelParams> {
    Ok(KernelParams::new(sigma_w_sq, 1.0 - sigma_w_sq, 0.0, 1.0)?.linear())
}

pub fn trace_trial(width: usize, sigma_w_sq: f64, seed: u64, trial: u32) -> Result<TraceTrial> {
    let weights = DeqWeights::sample(width, 1, linear_params(sigma_w_sq)?, seed, trial);
    let (trace, _) = linear_resolvent_stats(&weights, &[1.0], &[1.0])?;
    let op_norm = spectral_norm_estimate(&weights.recurrent(), 30);
    Ok(TraceTrial { trial, trace, op_norm })
}

/// Ascending eigenvalues of `(I - A)ᵀ(I - A)` for one draw.
pub fn spectrum_trial(width: usize, sigma_w_sq: f64, seed: u64, trial: u32) -> Result<Vec<f64>> {
    empirical_spectrum(&DeqWeights::sample(width, 1, linear_params(sigma_w_sq)?, seed, trial))
}
