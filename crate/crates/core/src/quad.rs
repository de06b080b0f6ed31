//! Adaptive Simpson quadrature with a Richardson-corrected local rule.

use crate::error::{Error, Result};

/// Result of [`adaptive_simpson`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    /// Sum of local error estimates `|S2 - S1| / 15`.
    pub error: f64,
    pub evaluations: usize,
}

/// Integrate `f` over `[a, b]` to absolute tolerance `tol`.
///
/// Intervals are bisected until the local Simpson error estimate drops below
/// their share of `tol` or `max_depth` is reached. Hitting the depth cap with
/// an unresolved interval is an error.
pub fn adaptive_simpson<F>(f: F, a: f64, b: f64, tol: f64, max_depth: u32) -> Result<Quadrature>
where
    F: Fn(f64) -> Result<f64>,
{
    if !(a.is_finite() && b.is_finite()) || b < a {
        return Err(Error::OutOfRange("integration bounds"));
    }
    if a == b {
        return Ok(Quadrature { value: 0.0, error: 0.0, evaluations: 0 });
    }
    let fa = f(a)?;
    let fb = f(b)?;
    let m = 0.5 * (a + b);
    let fm = f(m)?;
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let mut state = State { evaluations: 3, error: 0.0, unresolved: false };
    let value = recurse(&f, a, b, fa, fm, fb, whole, tol, max_depth, &mut state)?;
    if state.unresolved {
        return Err(Error::NoConvergence {
            what: "adaptive Simpson quadrature",
            iterations: state.evaluations,
            residual: state.error,
        });
    }
    Ok(Quadrature { value, error: state.error, evaluations: state.evaluations })
}

struct State {
    evaluations: usize,
    error: f64,
    unresolved: bool,
}

#[allow(clippy::too_many_arguments)]
fn recurse<F>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    state: &mut State,
) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm)?;
    let frm = f(rm)?;
    state.evaluations += 2;
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol || depth == 0 {
        if depth == 0 && delta.abs() > 15.0 * tol {
            state.unresolved = true;
        }
        state.error += delta.abs() / 15.0;
        return Ok(left + right + delta / 15.0);
    }
    Ok(recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, state)?
        + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, state)?)
}
