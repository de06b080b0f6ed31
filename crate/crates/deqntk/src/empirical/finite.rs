use faer::{Col, Mat};

use super::{activate, activate_dot, col_from_stream, dot, mat_from_stream, DeqWeights, EmpiricalNtkBreakdown};
use crate::error::{Error, Result};
use crate::rng::Block;

/// Whether the `d` layers share the equilibrium weights or draw their own.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerWeights {
    /// Every layer uses `weights.w`, `weights.u`, `weights.b`.
    Tied,
    /// Layer `h` draws `W^(h)`, `U^(h)`, `b^(h)` from stream layer `h`; they are
    /// regenerated on the backward pass instead of stored.
    Untied,
}

struct Layer<'a> {
    w: std::borrow::Cow<'a, Mat<f64>>,
    u: std::borrow::Cow<'a, Mat<f64>>,
    b: std::borrow::Cow<'a, Col<f64>>,
}

fn layer(weights: &DeqWeights, mode: LayerWeights, h: usize) -> Layer<'_> {
    use std::borrow::Cow;
    match mode {
        LayerWeights::Tied => {
            Layer { w: Cow::Borrowed(&weights.w), u: Cow::Borrowed(&weights.u), b: Cow::Borrowed(&weights.b) }
        }
        LayerWeights::Untied => {
            let (n, m, s, t) = (weights.width(), weights.input_dim(), weights.seed, weights.trial);
            let h = h as u32;
            Layer {
                w: Cow::Owned(mat_from_stream(s, t, Block::W, h, n, n)),
                u: Cow::Owned(mat_from_stream(s, t, Block::U, h, n, m)),
                b: Cow::Owned(col_from_stream(s, t, Block::B, h, n)),
            }
        }
    }
}

/// Gradient inner product of the depth-`d` network `g^(h) = σ(A^(h) g^(h-1) + σ_U U^(h) x + σ_b b^(h))`,
/// `g^(0) = 0`, with readout `√(σ_v²/n) vᵀ g^(d)`.
///
/// Backward: `p^(d) = D_d c`, `p^(h) = D_h A^(h+1)ᵀ p^(h+1)`. With untied layers
/// the kernel is `Σ_h` of per-layer terms; with tied layers the shared weight
/// gradients are summed over layers before taking the inner product.
pub fn finite_depth_empirical_ntk(
    weights: &DeqWeights,
    x: &[f64],
    y: &[f64],
    depth: usize,
    mode: LayerWeights,
) -> Result<EmpiricalNtkBreakdown> {
    if depth == 0 {
        return Err(Error::Config("finite-depth empirical NTK needs depth >= 1".into()));
    }
    let m = weights.input_dim();
    if x.len() != m || y.len() != m {
        return Err(Error::Config(format!("inputs must have length {m}")));
    }
    let n = weights.width();
    let act = weights.params.activation;
    let a = weights.w_scale();
    let su = weights.params.sigma_u_sq.sqrt();
    let sb = weights.params.sigma_b_sq.sqrt();
    let xc = Col::from_fn(m, |i| x[i]);
    let yc = Col::from_fn(m, |i| y[i]);

    // g[h] for h = 0..=d, dv[h-1] = σ'(pre^(h)) for h = 1..=d.
    let mut gx = vec![Col::<f64>::zeros(n)];
    let mut gy = vec![Col::<f64>::zeros(n)];
    let mut dx = Vec::with_capacity(depth);
    let mut dy = Vec::with_capacity(depth);
    for h in 1..=depth {
        let l = layer(weights, mode, h);
        let step = |g: &Col<f64>, inp: &Col<f64>| {
            let wg = l.w.as_ref() * g;
            let ux = l.u.as_ref() * inp;
            let pre = Col::from_fn(n, |i| a * wg[i] + su * ux[i] + sb * l.b[i]);
            (Col::from_fn(n, |i| activate(act, pre[i])), Col::from_fn(n, |i| activate_dot(act, pre[i])))
        };
        let (g1, d1) = step(&gx[h - 1], &xc);
        let (g2, d2) = step(&gy[h - 1], &yc);
        gx.push(g1);
        gy.push(g2);
        dx.push(d1);
        dy.push(d2);
    }

    let c = Col::from_fn(n, |i| weights.v_scale() * weights.v[i]);
    // px[h-1] = p^(h).
    let mut px = vec![Col::<f64>::zeros(n); depth];
    let mut py = vec![Col::<f64>::zeros(n); depth];
    px[depth - 1] = Col::from_fn(n, |i| dx[depth - 1][i] * c[i]);
    py[depth - 1] = Col::from_fn(n, |i| dy[depth - 1][i] * c[i]);
    for h in (1..depth).rev() {
        let l = layer(weights, mode, h + 1);
        let back = |p: &Col<f64>, d: &Col<f64>| {
            let wt = l.w.as_ref().transpose() * p;
            Col::from_fn(n, |i| d[i] * a * wt[i])
        };
        px[h - 1] = back(&px[h], &dx[h - 1]);
        py[h - 1] = back(&py[h], &dy[h - 1]);
    }

    let prm = &weights.params;
    let nf = n as f64;
    let xy = dot(&xc, &yc);
    let v_term = prm.sigma_v_sq / nf * dot(&gx[depth], &gy[depth]);
    let (w_term, pp) = match mode {
        LayerWeights::Untied => {
            let mut w = 0.0;
            let mut pp = 0.0;
            for h in 1..=depth {
                let ph = dot(&px[h - 1], &py[h - 1]);
                w += ph * dot(&gx[h - 1], &gy[h - 1]);
                pp += ph;
            }
            (prm.sigma_w_sq / nf * w, pp)
        }
        LayerWeights::Tied => {
            let stack = |cols: &[Col<f64>]| Mat::from_fn(n, cols.len(), |i, j| cols[j][i]);
            let (pxm, pym) = (stack(&px), stack(&py));
            let (gxm, gym) = (stack(&gx[..depth]), stack(&gy[..depth]));
            let ppm = pxm.transpose() * &pym;
            let ggm = gxm.transpose() * &gym;
            let mut w = 0.0;
            for j in 0..depth {
                for i in 0..depth {
                    w += ppm[(i, j)] * ggm[(i, j)];
                }
            }
            let sx = Col::from_fn(n, |i| px.iter().map(|p| p[i]).sum());
            let sy = Col::from_fn(n, |i| py.iter().map(|p| p[i]).sum());
            (prm.sigma_w_sq / nf * w, dot(&sx, &sy))
        }
    };
    Ok(EmpiricalNtkBreakdown::new(w_term, prm.sigma_u_sq * pp * xy, prm.sigma_b_sq * pp, v_term))
}
