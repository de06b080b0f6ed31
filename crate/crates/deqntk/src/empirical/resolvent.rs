use faer::linalg::solvers::DenseSolveCore;
use faer::{Col, Mat, Side};

use super::{dot, DeqWeights, EmpiricalNtkBreakdown};
use crate::error::{Error, Result};

fn identity_minus(a: &Mat<f64>) -> Mat<f64> {
    let n = a.nrows();
    Mat::from_fn(n, n, |i, j| if i == j { 1.0 - a[(i, j)] } else { -a[(i, j)] })
}

/// Largest singular value, computed exactly.
pub fn operator_norm(m: &Mat<f64>) -> Result<f64> {
    let s = m.singular_values().map_err(|e| Error::LinAlg(format!("{e:?}")))?;
    Ok(s.into_iter().fold(0.0, f64::max))
}

/// Power-iteration estimate of the largest singular value (a lower bound).
pub fn spectral_norm_estimate(m: &Mat<f64>, iterations: usize) -> f64 {
    let n = m.ncols();
    let mut v = Col::from_fn(n, |i| 1.0 + (i % 7) as f64 * 0.1);
    let mut sigma = 0.0;
    for _ in 0..iterations {
        let nv = dot(&v, &v).sqrt();
        if nv == 0.0 {
            return 0.0;
        }
        v = Col::from_fn(n, |i| v[i] / nv);
        let mv = m * &v;
        v = m.transpose() * &mv;
        sigma = dot(&mv, &mv).sqrt();
    }
    sigma
}

/// `H = (I - A)⁻¹` statistics of the linear equilibrium network.
///
/// Returns `tr(HᵀH)/n` and the NTK terms from the closed resolvent forms
/// `z* = H (σ_U U x + σ_b b)` and `p = Hᵀ c`.
pub fn linear_resolvent_stats(weights: &DeqWeights, x: &[f64], y: &[f64]) -> Result<(f64, EmpiricalNtkBreakdown)> {
    let n = weights.width();
    let h = identity_minus(&weights.recurrent()).partial_piv_lu().inverse();
    let mut fro = 0.0;
    for j in 0..n {
        for i in 0..n {
            fro += h[(i, j)] * h[(i, j)];
        }
    }
    if !fro.is_finite() {
        return Err(Error::Singular { condition: f64::INFINITY });
    }
    let trace_term = fro / n as f64;
    let zx = &h * weights.injection(x)?;
    let zy = &h * weights.injection(y)?;
    let c = Col::from_fn(n, |i| weights.v_scale() * weights.v[i]);
    let p = h.transpose() * &c;
    let prm = &weights.params;
    let nf = n as f64;
    let pp = dot(&p, &p);
    let zz = dot(&zx, &zy);
    let xy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let terms = EmpiricalNtkBreakdown::new(
        prm.sigma_w_sq / nf * pp * zz,
        prm.sigma_u_sq * pp * xy,
        prm.sigma_b_sq * pp,
        prm.sigma_v_sq / nf * zz,
    );
    Ok((trace_term, terms))
}

/// Eigenvalues of `(I - A)ᵀ(I - A)`, ascending.
pub fn empirical_spectrum(weights: &DeqWeights) -> Result<Vec<f64>> {
    let b = identity_minus(&weights.recurrent());
    let m = b.transpose() * &b;
    let mut ev = m.self_adjoint_eigenvalues(Side::Lower).map_err(|e| Error::LinAlg(format!("{e:?}")))?;
    ev.iter_mut().for_each(|e| *e = e.max(0.0));
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}
