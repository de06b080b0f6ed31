//! Limiting spectrum of `M = (I - A)ᵀ(I - A)` with `A = σ_W W / √n`, `W` Gaussian.
//!
//! Writing `s = σ_W²`, the Stieltjes transform `g(z) = ∫ dμ(λ) / (λ - z)`
//! solves `-1/g = (1 + s g) z - 1/(1 + s g)`, i.e. the cubic
//!
//! ```text
//! s² z g³ + 2 s z g² + (z + s - 1) g + 1 = 0
//! ```
//!
//! and the density is `p(λ) = lim_{b→0⁺} Im g(λ + i b) / π`. Roots are found as
//! eigenvalues of the companion matrix and polished by Newton; the branch is
//! picked by the conditions every Stieltjes transform of a measure on `[0, ∞)`
//! satisfies: `Im g > 0`, `Im(z g) > 0` and `|g| ≤ 1 / Im z`.

use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::quad::{adaptive_simpson, Quadrature};

/// Default imaginary offset for boundary values.
pub const DEFAULT_B_EPS: f64 = 1e-8;
/// Offset from each support endpoint used by the quadratures.
pub const EDGE_OFFSET: f64 = 1e-6;

fn check_s(s: f64) -> Result<()> {
    if !(0.0..1.0).contains(&s) {
        return Err(Error::OutOfRange("sigma_w_sq must lie in [0, 1)"));
    }
    Ok(())
}

/// Coefficients `[a0, a1, a2, a3]` of the cubic in `g`.
fn cubic(z: C64, s: f64) -> [C64; 4] {
    [C64::new(1.0, 0.0), z + (s - 1.0), z * (2.0 * s), z * (s * s)]
}

fn horner(c: &[C64; 4], g: C64) -> (C64, C64) {
    let p = ((c[3] * g + c[2]) * g + c[1]) * g + c[0];
    let dp = (c[3] * 3.0 * g + c[2] * 2.0) * g + c[1];
    (p, dp)
}

/// Eigenvalues of a 3×3 complex upper-Hessenberg matrix by shifted QR.
fn hessenberg_eigenvalues(mut h: [[C64; 3]; 3]) -> Result<[C64; 3]> {
    const N: usize = 3;
    let zero = C64::new(0.0, 0.0);
    let mut out = [zero; N];
    let mut hi = N - 1;
    let mut stuck = 0;
    for _ in 0..300 {
        // Deflate negligible subdiagonal entries.
        let mut lo = hi;
        while lo > 0 {
            let scale = h[lo][lo].norm() + h[lo - 1][lo - 1].norm();
            if h[lo][lo - 1].norm() <= f64::EPSILON * scale {
                h[lo][lo - 1] = zero;
                break;
            }
            lo -= 1;
        }
        if lo == hi {
            out[hi] = h[hi][hi];
            if hi == 0 {
                return Ok(out);
            }
            hi -= 1;
            stuck = 0;
            continue;
        }
        stuck += 1;
        // Wilkinson shift from the trailing 2×2 block; exceptional shift when stuck.
        let (a, b, c, d) = (h[hi - 1][hi - 1], h[hi - 1][hi], h[hi][hi - 1], h[hi][hi]);
        let tr = (a + d) * 0.5;
        let disc = ((a - d) * 0.5 * ((a - d) * 0.5) + b * c).sqrt();
        let (e1, e2) = (tr + disc, tr - disc);
        let mut mu = if (e1 - d).norm() < (e2 - d).norm() { e1 } else { e2 };
        if stuck % 11 == 10 {
            mu += C64::new(h[hi][hi - 1].norm(), 0.5 * h[hi][hi - 1].norm());
        }
        for k in lo..=hi {
            h[k][k] -= mu;
        }
        let mut rot = [(zero, zero); N];
        for k in lo..hi {
            let (x, y) = (h[k][k], h[k + 1][k]);
            let r = (x.norm_sqr() + y.norm_sqr()).sqrt();
            let (cs, sn) = if r == 0.0 { (C64::new(1.0, 0.0), zero) } else { (x / r, y / r) };
            rot[k] = (cs, sn);
            for j in k..N {
                let (u, v) = (h[k][j], h[k + 1][j]);
                h[k][j] = cs.conj() * u + sn.conj() * v;
                h[k + 1][j] = -sn * u + cs * v;
            }
        }
        for k in lo..hi {
            let (cs, sn) = rot[k];
            for row in h.iter_mut().take((k + 2).min(N - 1) + 1) {
                let (u, v) = (row[k], row[k + 1]);
                row[k] = u * cs + v * sn;
                row[k + 1] = -u * sn.conj() + v * cs.conj();
            }
        }
        for k in lo..=hi {
            h[k][k] += mu;
        }
    }
    Err(Error::NoConvergence { what: "companion QR", iterations: 300, residual: f64::NAN })
}

/// All roots of the cubic at `z`, Newton-polished. `s = 0` has the single root `1 / (1 - z)`.
pub fn cubic_roots(z: C64, s: f64) -> Result<Vec<C64>> {
    check_s(s)?;
    if s == 0.0 {
        return Ok(alloc::vec![C64::new(1.0, 0.0) / (C64::new(1.0, 0.0) - z)]);
    }
    let c = cubic(z, s);
    let (c0, c1, c2) = (c[0] / c[3], c[1] / c[3], c[2] / c[3]);
    let zero = C64::new(0.0, 0.0);
    let one = C64::new(1.0, 0.0);
    let companion = [[-c2, -c1, -c0], [one, zero, zero], [zero, one, zero]];
    let roots = hessenberg_eigenvalues(companion)?;
    Ok(roots.iter().map(|&g| polish(&c, g)).collect())
}

fn polish(c: &[C64; 4], mut g: C64) -> C64 {
    let (mut p, _) = horner(c, g);
    for _ in 0..8 {
        let (_, dp) = horner(c, g);
        if dp.norm() == 0.0 {
            break;
        }
        let cand = g - p / dp;
        let (pc, _) = horner(c, cand);
        if !(pc.norm() < p.norm()) {
            break;
        }
        g = cand;
        p = pc;
    }
    g
}

/// Residual of the implicit equation `1/G - (1 - sG) z + 1/(1 - sG)` at `G = -g`.
pub fn implicit_residual(g: C64, z: C64, s: f64) -> f64 {
    let gg = -g;
    let one = C64::new(1.0, 0.0);
    let w = one - gg * s;
    (one / gg - w * z + one / w).norm()
}

fn is_nevanlinna(g: C64, z: C64) -> bool {
    g.im > 0.0 && (z * g).im > 0.0 && g.norm() <= (1.0 + 1e-9) / z.im
}

/// Stieltjes transform of the limiting spectrum at `z` (`Im z > 0`).
pub fn stieltjes_root(z: C64, sigma_w_sq: f64) -> Result<C64> {
    stieltjes_root_near(z, sigma_w_sq, None)
}

/// As [`stieltjes_root`], breaking ties towards `hint` (the value at a nearby `z`).
pub fn stieltjes_root_near(z: C64, sigma_w_sq: f64, hint: Option<C64>) -> Result<C64> {
    if !(z.im > 0.0) || !z.re.is_finite() {
        return Err(Error::OutOfRange("z must lie in the open upper half plane"));
    }
    let roots = cubic_roots(z, sigma_w_sq)?;
    let valid: Vec<C64> = roots.iter().copied().filter(|&g| is_nevanlinna(g, z)).collect();
    let pool: Vec<C64> = if valid.is_empty() { roots.iter().copied().filter(|g| g.im > 0.0).collect() } else { valid };
    let pick = match (pool.len(), hint) {
        (0, _) => return Err(Error::NoUpperRoot { re: z.re, im: z.im }),
        (1, _) => pool[0],
        (_, Some(h)) => *pool.iter().min_by(|a, b| (**a - h).norm().total_cmp(&(**b - h).norm())).expect("non-empty"),
        (_, None) => *pool.iter().max_by(|a, b| a.im.total_cmp(&b.im)).expect("non-empty"),
    };
    Ok(pick)
}

fn im_over_pi(lambda: f64, s: f64, b: f64, hint: Option<C64>) -> Result<(f64, C64)> {
    let g = stieltjes_root_near(C64::new(lambda, b), s, hint)?;
    Ok((g.im / PI, g))
}

/// Density `Im g(λ + i b) / π`, linearly extrapolated to `b = 0` from `b_eps` and `100 b_eps`.
pub fn density(lambda: f64, sigma_w_sq: f64, b_eps: f64) -> Result<f64> {
    Ok(density_near(lambda, sigma_w_sq, b_eps, None)?.0)
}

/// [`density`] with a continuation hint; also returns the root at `b_eps`.
pub fn density_near(lambda: f64, sigma_w_sq: f64, b_eps: f64, hint: Option<C64>) -> Result<(f64, C64)> {
    if !(b_eps > 0.0) {
        return Err(Error::OutOfRange("b_eps must be positive"));
    }
    let (p_fine, g) = im_over_pi(lambda, sigma_w_sq, b_eps, hint)?;
    let (p_coarse, _) = im_over_pi(lambda, sigma_w_sq, 100.0 * b_eps, Some(g))?;
    Ok(((p_fine - (p_coarse - p_fine) / 99.0).max(0.0), g))
}

/// Discriminant of the cubic at real `z = λ`; the density is positive exactly where it is negative.
pub fn discriminant(lambda: f64, s: f64) -> f64 {
    let (a, b, c, d) = (s * s * lambda, 2.0 * s * lambda, lambda + s - 1.0, 1.0);
    18.0 * a * b * c * d - 4.0 * b * b * b * d + b * b * c * c - 4.0 * a * c * c * c - 27.0 * a * a * d * d
}

/// Support `[l, u]` of the limiting density, located by sign bisection of the discriminant.
pub fn support_endpoints(sigma_w_sq: f64) -> Result<(f64, f64)> {
    check_s(sigma_w_sq)?;
    if sigma_w_sq == 0.0 {
        return Ok((1.0, 1.0));
    }
    let s = sigma_w_sq;
    // The spectrum sits inside [0, (1 + 2σ_W)²]; pad and scan for the negative region.
    let top = (1.0 + 2.0 * libm::sqrt(s)) * (1.0 + 2.0 * libm::sqrt(s)) + 0.5;
    let n = 20_000;
    let x = |k: usize| top * k as f64 / n as f64;
    let inside: Vec<usize> = (1..=n).filter(|&k| discriminant(x(k), s) < 0.0).collect();
    let (first, last) = match (inside.first(), inside.last()) {
        (Some(&f), Some(&l)) => (f, l),
        _ => return Err(Error::NoConvergence { what: "support scan", iterations: n, residual: f64::NAN }),
    };
    let edge = |mut outside: f64, mut inside: f64| {
        for _ in 0..200 {
            let mid = 0.5 * (outside + inside);
            if mid == outside || mid == inside {
                break;
            }
            if discriminant(mid, s) < 0.0 {
                inside = mid;
            } else {
                outside = mid;
            }
        }
        inside
    };
    Ok((edge(x(first - 1), x(first)), edge(x(last + 1), x(last))))
}

/// Closed-form roots `((-s² + 20s + 8) ∓ √(s⁴ + 24s³ + 192s² + 512s)) / 8` of the
/// quadratic factor of [`discriminant`].
pub fn closed_form_endpoints(sigma_w_sq: f64) -> (f64, f64) {
    let s = sigma_w_sq;
    let centre = -s * s + 20.0 * s + 8.0;
    let root = libm::sqrt(s * s * s * s + 24.0 * s * s * s + 192.0 * s * s + 512.0 * s);
    ((centre - root) / 8.0, (centre + root) / 8.0)
}

/// Explicit cube-root expression for the density, taking the real principal cube root.
///
/// Returns `None` where that branch is undefined (negative radicand).
pub fn closed_form_density(lambda: f64, sigma_w_sq: f64) -> Option<f64> {
    let (s, b) = (sigma_w_sq, lambda);
    let p = 9.0 * s.powi(4) * b * b - 2.0 * s.powi(3) * b.powi(3) + 18.0 * s.powi(3) * b * b;
    let q = 3.0 * s.powi(3) * b - s * s * b * b - 3.0 * s * s * b;
    let disc = p * p + 4.0 * q * q * q;
    if disc < 0.0 || s == 0.0 || b == 0.0 {
        return None;
    }
    let r = libm::cbrt(p + libm::sqrt(disc));
    if r == 0.0 {
        return None;
    }
    let sqrt3 = libm::sqrt(3.0);
    let t1 = sqrt3 * q / (3.0 * libm::cbrt(4.0) * s * s * b * r);
    let t2 = sqrt3 * r / (6.0 * libm::cbrt(2.0) * s * s * b);
    Some((t1 + t2) / PI)
}

/// `∫ w(λ) p(λ) dλ` over `[l + EDGE_OFFSET, u - EDGE_OFFSET]` by adaptive Simpson.
pub fn integrate_density<F>(sigma_w_sq: f64, weight: F, tol: f64) -> Result<Quadrature>
where
    F: Fn(f64) -> f64,
{
    let (l, u) = support_endpoints(sigma_w_sq)?;
    if sigma_w_sq == 0.0 {
        return Ok(Quadrature { value: weight(1.0), error: 0.0, evaluations: 1 });
    }
    adaptive_simpson(
        |x| Ok(weight(x) * density(x, sigma_w_sq, DEFAULT_B_EPS)?),
        l + EDGE_OFFSET,
        u - EDGE_OFFSET,
        tol,
        48,
    )
}

/// `∫ p(λ) / λ dλ`, which equals `1 / (1 - σ_W²)`.
pub fn integrate_inverse_eig(sigma_w_sq: f64) -> Result<f64> {
    let q = integrate_density(sigma_w_sq, |x| 1.0 / x, 1e-7)?;
    if q.error > 1e-4 {
        return Err(Error::NoConvergence {
            what: "inverse-moment quadrature",
            iterations: q.evaluations,
            residual: q.error,
        });
    }
    Ok(q.value)
}

/// Density tabulated on a grid clustered at the support edges.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDensitySamples {
    pub sigma_w_sq: f64,
    pub support: (f64, f64),
    /// `(λ, p(λ))`, ascending in `λ`.
    pub grid: Vec<(f64, f64)>,
    // Cumulative mass at each grid point.
    cumulative: Vec<f64>,
}

impl SpectralDensitySamples {
    /// Tabulate on `points` nodes `λ_k = l + (u - l)(1 - cos θ_k)/2`, `θ_k` uniform in `[0, π]`.
    ///
    /// The substitution removes the square-root edges, so the trapezoid rule in
    /// `θ` gives an accurate cumulative distribution.
    pub fn tabulate(sigma_w_sq: f64, points: usize) -> Result<Self> {
        let (l, u) = support_endpoints(sigma_w_sq)?;
        if sigma_w_sq == 0.0 {
            return Ok(Self { sigma_w_sq, support: (l, u), grid: Vec::new(), cumulative: Vec::new() });
        }
        let points = points.max(3);
        let half = 0.5 * (u - l);
        let step = PI / (points - 1) as f64;
        let mut grid = Vec::with_capacity(points);
        let mut hint = None;
        for k in 0..points {
            let theta = step * k as f64;
            let lambda = l + half * (1.0 - libm::cos(theta));
            let p = if k == 0 || k == points - 1 {
                0.0
            } else {
                let (p, g) = density_near(lambda, sigma_w_sq, DEFAULT_B_EPS, hint)?;
                hint = Some(g);
                p
            };
            grid.push((lambda, p));
        }
        let mut cumulative = Vec::with_capacity(points);
        let mut acc = 0.0;
        cumulative.push(0.0);
        for k in 1..points {
            let f = |j: usize| grid[j].1 * half * libm::sin(step * j as f64);
            acc += 0.5 * step * (f(k - 1) + f(k));
            cumulative.push(acc);
        }
        Ok(Self { sigma_w_sq, support: (l, u), grid, cumulative })
    }

    /// Total tabulated mass; 1 up to discretization error.
    pub fn mass(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(1.0)
    }

    /// Limiting CDF at `x`, interpolated linearly in the angle variable.
    pub fn cdf(&self, x: f64) -> f64 {
        let (l, u) = self.support;
        if x < l {
            return 0.0;
        }
        if x >= u || self.cumulative.is_empty() {
            return if x >= l { self.mass() } else { 0.0 };
        }
        let n = self.cumulative.len();
        let theta = libm::acos((1.0 - 2.0 * (x - l) / (u - l)).clamp(-1.0, 1.0));
        let pos = theta / PI * (n - 1) as f64;
        let k = (pos as usize).min(n - 2);
        let t = pos - k as f64;
        self.cumulative[k] * (1.0 - t) + self.cumulative[k + 1] * t
    }
}
