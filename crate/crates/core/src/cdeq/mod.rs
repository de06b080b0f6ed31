//! Convolutional DEQ-NTK.
//!
//! For images `x, y` of shape `P×Q×C` with unit-norm pixels, the covariance
//! tensors live on `P×Q×P×Q`. With `K⁰_{ij,i'j'} = x_ij · y_i'j'` and the
//! unscaled map `R(Σ) = σ_W² E_Λ[σ(u)σ(v)] + σ_U² K⁰`, the covariance fixed point is
//!
//! ```text
//! Σ_{ij,i'j'} = ℒ(R(Σ))_{ij,i'j'} / (S_ij S_i'j')
//! ```
//!
//! where `S_ij²` counts the in-image cells of the `q×q` window at `(i, j)`.
//! At the limit `K* = R / (S S')` and `K̇* = σ_W² E[σ'σ'] / (S S')`, and the
//! kernel is `Tr(Θ*)` with `Θ* = K̇* ⊙ ℒ(Θ*) + K*`.

mod tensor;

use alloc::vec;
use alloc::vec::Vec;

pub use tensor::{patch_trace, patch_trace_into, ConvKernelTensor};

use crate::error::{Error, Result};
use crate::params::KernelParams;

/// Tolerance on `‖x_ij‖ = 1`.
pub const UNIT_PIXEL_TOL: f64 = 1e-9;

/// Per-position normalization `S_ij` for an odd filter size `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvNormalizer {
    rows: usize,
    cols: usize,
    filter: usize,
    s: Vec<f64>,
}

impl ConvNormalizer {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.s[i * self.cols + j]
    }

    pub fn filter_size(&self) -> usize {
        self.filter
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

/// `S_ij = √(number of in-bounds cells in the q×q window centred at (i, j))`.
pub fn build_normalizer(rows: usize, cols: usize, q: usize) -> Result<ConvNormalizer> {
    if q == 0 || q.is_multiple_of(2) || q > rows.min(cols) {
        return Err(Error::InvalidFilter { q, p: rows, width: cols });
    }
    let r = q / 2;
    let span = |c: usize, n: usize| (c + r).min(n - 1) - c.saturating_sub(r) + 1;
    let mut s = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            s.push(libm::sqrt((span(i, rows) * span(j, cols)) as f64));
        }
    }
    Ok(ConvNormalizer { rows, cols, filter: q, s })
}

/// Image of shape `rows × cols × channels`, stored pixel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvImage {
    rows: usize,
    cols: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ConvImage {
    pub fn new(rows: usize, cols: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        let expected = rows * cols * channels;
        if data.len() != expected || expected == 0 {
            return Err(Error::Shape { expected, got: data.len() });
        }
        Ok(Self { rows, cols, channels, data })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.rows, self.cols, self.channels)
    }

    #[inline]
    pub fn pixel(&self, i: usize, j: usize) -> &[f64] {
        let start = (i * self.cols + j) * self.channels;
        &self.data[start..start + self.channels]
    }

    /// Error unless every pixel's channel vector has unit norm.
    pub fn check_unit_pixels(&self) -> Result<()> {
        for i in 0..self.rows {
            for j in 0..self.cols {
                let norm = libm::sqrt(self.pixel(i, j).iter().map(|v| v * v).sum());
                if (norm - 1.0).abs() > UNIT_PIXEL_TOL {
                    return Err(Error::NotUnitPixel { i, j, norm });
                }
            }
        }
        Ok(())
    }
}

/// Iteration controls for the two fixed-point stages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdeqConfig {
    pub filter: usize,
    pub sigma_tol: f64,
    pub sigma_max_iter: usize,
    pub theta_tol: f64,
    pub theta_max_iter: usize,
}

impl Default for CdeqConfig {
    fn default() -> Self {
        Self { filter: 3, sigma_tol: 1e-6, sigma_max_iter: 30, theta_tol: 1e-8, theta_max_iter: 100_000 }
    }
}

/// Limits of the covariance stage for one image pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CdeqFixedPoint {
    pub sigma: ConvKernelTensor,
    pub k: ConvKernelTensor,
    pub k_dot: ConvKernelTensor,
    /// `Σ(x, x)_{ij,ij}` and `Σ(y, y)_{ij,ij}` at the limit.
    pub diag_x: Vec<f64>,
    pub diag_y: Vec<f64>,
    pub iterations: usize,
    /// `ℓ∞` change of the last iteration.
    pub change: f64,
}

/// `K⁰_{ij,i'j'} = x_ij · y_i'j'`.
pub fn input_covariance(x: &ConvImage, y: &ConvImage) -> Result<ConvKernelTensor> {
    if x.dims() != y.dims() {
        let (p, q, c) = x.dims();
        let (p2, q2, c2) = y.dims();
        return Err(Error::Shape { expected: p * q * c, got: p2 * q2 * c2 });
    }
    let (p, q, _) = x.dims();
    Ok(ConvKernelTensor::from_fn(p, q, |i, j, i2, j2| {
        x.pixel(i, j).iter().zip(y.pixel(i2, j2)).map(|(a, b)| a * b).sum()
    }))
}

fn check_params(params: &KernelParams) -> Result<()> {
    params.require_contractive()?;
    if params.sigma_b_sq != 0.0 {
        return Err(Error::InvalidParams("the convolutional kernel has no bias; sigma_b_sq must be 0"));
    }
    Ok(())
}

/// Unscaled `(R, Ṙ)` with `R = σ_W² E_Λ[σσ] + σ_U² K⁰` and `Ṙ = σ_W² E_Λ[σ'σ']`,
/// where `Λ_{ij,i'j'}` pairs `Σ_{ij,i'j'}` with the diagonals `dx_ij`, `dy_i'j'`.
pub fn covariance_map(
    sigma: &ConvKernelTensor,
    k0: &ConvKernelTensor,
    diag_x: &[f64],
    diag_y: &[f64],
    params: &KernelParams,
) -> Result<(ConvKernelTensor, ConvKernelTensor)> {
    let (p, q) = sigma.dims();
    let mut r = ConvKernelTensor::zeros(p, q);
    let mut r_dot = ConvKernelTensor::zeros(p, q);
    let act = params.activation;
    for a in 0..p * q {
        for b in 0..p * q {
            let idx = a * p * q + b;
            let (vx, vy, c) = (diag_x[a], diag_y[b], sigma.as_slice()[idx]);
            let det = vx * vy - c * c;
            if det < -1e-9 * (vx * vy).max(1.0) {
                return Err(Error::NotPsd { index: idx, det });
            }
            let (e, e_dot) = act.expectations(c, vx, vy)?;
            r.as_mut_slice()[idx] = params.sigma_w_sq * e + params.sigma_u_sq * k0.as_slice()[idx];
            r_dot.as_mut_slice()[idx] = params.sigma_w_sq * e_dot;
        }
    }
    Ok((r, r_dot))
}

fn scale_entries(t: &mut ConvKernelTensor, norm: &ConvNormalizer) {
    let (p, q) = t.dims();
    let n = p * q;
    for a in 0..n {
        let sa = norm.s[a];
        for b in 0..n {
            t.as_mut_slice()[a * n + b] /= sa * norm.s[b];
        }
    }
}

/// `(K, K̇)` for one step: the unscaled map divided by `S_ij S_i'j'` at the entry index.
pub fn cdeq_k_step(
    sigma_prev: &ConvKernelTensor,
    k0: &ConvKernelTensor,
    diag_x: &[f64],
    diag_y: &[f64],
    norm: &ConvNormalizer,
    params: &KernelParams,
) -> Result<(ConvKernelTensor, ConvKernelTensor)> {
    let (mut k, mut k_dot) = covariance_map(sigma_prev, k0, diag_x, diag_y, params)?;
    scale_entries(&mut k, norm);
    scale_entries(&mut k_dot, norm);
    Ok((k, k_dot))
}

/// One covariance step `Σ ↦ ℒ(R(Σ)) / (S S')`.
pub fn sigma_map(
    sigma: &ConvKernelTensor,
    k0: &ConvKernelTensor,
    diag_x: &[f64],
    diag_y: &[f64],
    norm: &ConvNormalizer,
    params: &KernelParams,
) -> Result<ConvKernelTensor> {
    let (r, _) = covariance_map(sigma, k0, diag_x, diag_y, params)?;
    let mut out = patch_trace(&r, norm.filter);
    scale_entries(&mut out, norm);
    Ok(out)
}

// Diagonal of the self covariance evolves on its own: Σ(x,x)_{ij,ij} only
// depends on diagonal entries of the previous iterate.
fn diag_step(diag: &[f64], k0_diag: &[f64], norm: &ConvNormalizer, params: &KernelParams) -> Vec<f64> {
    let (p, q) = norm.dims();
    let r = (norm.filter / 2) as isize;
    let mut out = vec![0.0; p * q];
    for i in 0..p as isize {
        for j in 0..q as isize {
            let mut acc = 0.0;
            for a in -r..=r {
                for b in -r..=r {
                    let (x, y) = (i + a, j + b);
                    if x >= 0 && x < p as isize && y >= 0 && y < q as isize {
                        let k = x as usize * q + y as usize;
                        // E[σ(u)²] = Var(u) for both activations.
                        acc += params.sigma_w_sq * diag[k] + params.sigma_u_sq * k0_diag[k];
                    }
                }
            }
            let k = i as usize * q + j as usize;
            out[k] = acc / (norm.s[k] * norm.s[k]);
        }
    }
    out
}

fn self_diag(x: &ConvImage) -> Vec<f64> {
    let (p, q, _) = x.dims();
    (0..p * q).map(|k| x.pixel(k / q, k % q).iter().map(|v| v * v).sum()).collect()
}

/// Iterate the covariance stage to `ℓ∞` change `≤ config.sigma_tol` and return `K*`, `K̇*`.
pub fn cdeq_sigma_fixed_point(
    x: &ConvImage,
    y: &ConvImage,
    params: &KernelParams,
    config: &CdeqConfig,
) -> Result<CdeqFixedPoint> {
    check_params(params)?;
    x.check_unit_pixels()?;
    y.check_unit_pixels()?;
    let (p, q, _) = x.dims();
    let norm = build_normalizer(p, q, config.filter)?;
    let k0 = input_covariance(x, y)?;
    let (k0x, k0y) = (self_diag(x), self_diag(y));

    let diag0 = |k0d: &[f64]| {
        let ones = vec![0.0; k0d.len()];
        // Σ⁰ = ℒ(K⁰)/(S S'): same as one diagonal step with σ_W² = 0, σ_U² = 1.
        let unit = KernelParams { sigma_w_sq: 0.0, sigma_u_sq: 1.0, ..*params };
        diag_step(&ones, k0d, &norm, &unit)
    };
    let mut dx = diag0(&k0x);
    let mut dy = diag0(&k0y);
    let mut sigma = patch_trace(&k0, config.filter);
    scale_entries(&mut sigma, &norm);

    let mut change = f64::INFINITY;
    let mut iterations = 0;
    while iterations < config.sigma_max_iter {
        iterations += 1;
        let next = sigma_map(&sigma, &k0, &dx, &dy, &norm, params)?;
        let nx = diag_step(&dx, &k0x, &norm, params);
        let ny = diag_step(&dy, &k0y, &norm, params);
        change = next.max_abs_diff(&sigma);
        for (a, b) in nx.iter().zip(&dx).chain(ny.iter().zip(&dy)) {
            change = change.max((a - b).abs());
        }
        sigma = next;
        dx = nx;
        dy = ny;
        if change <= config.sigma_tol {
            let (k, k_dot) = cdeq_k_step(&sigma, &k0, &dx, &dy, &norm, params)?;
            return Ok(CdeqFixedPoint { sigma, k, k_dot, diag_x: dx, diag_y: dy, iterations, change });
        }
    }
    Err(Error::NoConvergence { what: "convolutional covariance stage", iterations, residual: change })
}

/// Solve `Θ = K̇ ⊙ ℒ(Θ) + K` by iteration to `ℓ∞` change `≤ tol`; returns `(Tr Θ, iterations)`.
pub fn cdeq_theta(
    k: &ConvKernelTensor,
    k_dot: &ConvKernelTensor,
    q: usize,
    tol: f64,
    max_iter: usize,
) -> Result<(f64, usize)> {
    let mut theta = k.clone();
    let mut buf = ConvKernelTensor::zeros(k.dims().0, k.dims().1);
    let mut change = f64::INFINITY;
    for it in 1..=max_iter {
        patch_trace_into(&theta, q, &mut buf);
        change = 0.0;
        for ((t, l), (kd, kk)) in
            theta.as_mut_slice().iter_mut().zip(buf.as_slice()).zip(k_dot.as_slice().iter().zip(k.as_slice()))
        {
            let next = kd * l + kk;
            change = f64::max(change, (next - *t).abs());
            *t = next;
        }
        if change <= tol {
            return Ok((theta.trace(), it));
        }
    }
    Err(Error::NoConvergence { what: "convolutional NTK stage", iterations: max_iter, residual: change })
}

/// Direct dense solve of `(I - diag(K̇) L) θ = K` for small images; oracle for [`cdeq_theta`].
pub fn cdeq_theta_direct(k: &ConvKernelTensor, k_dot: &ConvKernelTensor, q: usize) -> Result<f64> {
    let (p, w) = k.dims();
    let n = (p * w) * (p * w);
    if p * w > 36 {
        return Err(Error::OutOfRange("direct solve is limited to images with at most 36 pixels"));
    }
    // Assemble the matrix of ℒ column by column from unit tensors.
    let mut a = vec![0.0; n * n];
    let mut unit = ConvKernelTensor::zeros(p, w);
    let mut col = ConvKernelTensor::zeros(p, w);
    for c in 0..n {
        unit.as_mut_slice()[c] = 1.0;
        patch_trace_into(&unit, q, &mut col);
        unit.as_mut_slice()[c] = 0.0;
        for r in 0..n {
            a[r * n + c] = -k_dot.as_slice()[r] * col.as_slice()[r];
        }
    }
    for d in 0..n {
        a[d * n + d] += 1.0;
    }
    let mut rhs = k.as_slice().to_vec();
    solve_dense(&mut a, &mut rhs, n)?;
    Ok(ConvKernelTensor::from_vec(p, w, rhs)?.trace())
}

// Gaussian elimination with partial pivoting, in place.
fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) -> Result<()> {
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&r1, &r2| a[r1 * n + col].abs().total_cmp(&a[r2 * n + col].abs()))
            .expect("non-empty range");
        let pv = a[piv * n + col];
        if pv.abs() < 1e-300 {
            return Err(Error::Singular(pv));
        }
        if piv != col {
            for c in 0..n {
                a.swap(piv * n + c, col * n + c);
            }
            b.swap(piv, col);
        }
        for r in col + 1..n {
            let f = a[r * n + col] / pv;
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                a[r * n + c] -= f * a[col * n + c];
            }
            b[r] -= f * b[col];
        }
    }
    for r in (0..n).rev() {
        let mut acc = b[r];
        for c in r + 1..n {
            acc -= a[r * n + c] * b[c];
        }
        b[r] = acc / a[r * n + r];
    }
    Ok(())
}

/// Convolutional DEQ-NTK value `Tr(Θ*)` for one image pair.
pub fn cdeq_ntk(x: &ConvImage, y: &ConvImage, params: &KernelParams, config: &CdeqConfig) -> Result<f64> {
    let fp = cdeq_sigma_fixed_point(x, y, params, config)?;
    Ok(cdeq_theta(&fp.k, &fp.k_dot, config.filter, config.theta_tol, config.theta_max_iter)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizer_counts() {
        let n = build_normalizer(32, 32, 3).unwrap();
        assert_eq!(n.get(5, 7), 3.0);
        assert_eq!(n.get(0, 0), 2.0);
        assert_eq!(n.get(31, 31), 2.0);
        assert!((n.get(0, 5) - 6f64.sqrt()).abs() < 1e-15);
        let n = build_normalizer(4, 5, 1).unwrap();
        assert!((0..4).all(|i| (0..5).all(|j| n.get(i, j) == 1.0)));
        assert_eq!(build_normalizer(1, 1, 1).unwrap().get(0, 0), 1.0);
        assert!(build_normalizer(8, 8, 2).is_err());
        assert!(build_normalizer(2, 8, 3).is_err());
    }

    #[test]
    fn zero_recurrence_gives_scaled_input() {
        let x = ConvImage::new(2, 2, 1, vec![1.0, -1.0, 1.0, 1.0]).unwrap();
        let y = ConvImage::new(2, 2, 1, vec![-1.0, 1.0, 1.0, -1.0]).unwrap();
        let params = KernelParams::new(0.0, 1.0, 0.0, 1.0).unwrap();
        let norm = build_normalizer(2, 2, 1).unwrap();
        let k0 = input_covariance(&x, &y).unwrap();
        let sigma = ConvKernelTensor::zeros(2, 2);
        let ones = vec![1.0; 4];
        let (k, k_dot) = cdeq_k_step(&sigma, &k0, &ones, &ones, &norm, &params).unwrap();
        assert_eq!(k, k0);
        assert_eq!(k_dot.max_abs(), 0.0);
    }

    #[test]
    fn rejects_non_unit_pixels_and_bias() {
        let x = ConvImage::new(1, 1, 2, vec![0.5, 0.5]).unwrap();
        let params = KernelParams::new(0.5, 0.5, 0.0, 1.0).unwrap();
        let cfg = CdeqConfig { filter: 1, ..CdeqConfig::default() };
        assert!(matches!(cdeq_ntk(&x, &x, &params, &cfg), Err(Error::NotUnitPixel { .. })));
        let x = ConvImage::new(1, 1, 1, vec![1.0]).unwrap();
        let params = KernelParams::new(0.5, 0.3, 0.2, 1.0).unwrap();
        assert!(matches!(cdeq_ntk(&x, &x, &params, &cfg), Err(Error::InvalidParams(_))));
    }

    #[test]
    fn zero_derivative_returns_trace_of_k() {
        let k = ConvKernelTensor::from_fn(2, 2, |a, b, c, d| (1 + a + b + c + d) as f64);
        let (t, _) = cdeq_theta(&k, &ConvKernelTensor::zeros(2, 2), 1, 1e-12, 10).unwrap();
        assert_eq!(t, k.trace());
    }
}
