use deqntk::empirical::{
    deq_forward, empirical_spectrum, finite_depth_empirical_ntk, gradients, ift_ntk_pair, operator_norm, DeqWeights,
    ForwardOptions, LayerWeights,
};
use deqntk::rng::unit_vector;
use deqntk_core::ntk::finite_depth_ntk;
use deqntk_core::KernelParams;
use faer::{Col, Mat};

fn tight() -> ForwardOptions {
    ForwardOptions { tol: 1e-15, max_iter: 100_000, damping: 1.0 }
}

fn output(w: &DeqWeights, x: &[f64]) -> f64 {
    let st = deq_forward(w, x, &tight()).unwrap();
    w.readout(&st.z_star)
}

fn rel_err(fd: &[f64], an: &[f64]) -> f64 {
    let num: f64 = fd.iter().zip(an).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let den: f64 = an.iter().map(|b| b * b).sum::<f64>().sqrt();
    num / den
}

fn mat_entries(m: &Mat<f64>) -> Vec<f64> {
    (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)])).collect()
}

fn col_entries(c: &Col<f64>) -> Vec<f64> {
    (0..c.nrows()).map(|i| c[i]).collect()
}

#[test]
fn adjoint_gradients_match_central_differences() {
    let n = 32;
    let m = 5;
    let p = KernelParams::new(0.125, 0.8, 0.075, 2.0).unwrap();
    let base = DeqWeights::sample(n, m, p, 77, 0);
    let x = unit_vector(77, 0, m);
    let st = deq_forward(&base, &x, &tight()).unwrap();
    let g = gradients(&base, &x, &st).unwrap();
    let h = 1e-5;
    let central = |perturb: &dyn Fn(&mut DeqWeights, f64)| {
        let mut plus = base.clone();
        perturb(&mut plus, h);
        let mut minus = base.clone();
        perturb(&mut minus, -h);
        (output(&plus, &x) - output(&minus, &x)) / (2.0 * h)
    };
    let fd_w: Vec<f64> = (0..n * n).map(|k| central(&|w, d| w.w[(k / n, k % n)] += d)).collect();
    let fd_u: Vec<f64> = (0..n * m).map(|k| central(&|w, d| w.u[(k / m, k % m)] += d)).collect();
    let fd_b: Vec<f64> = (0..n).map(|k| central(&|w, d| w.b[k] += d)).collect();
    let fd_v: Vec<f64> = (0..n).map(|k| central(&|w, d| w.v[k] += d)).collect();
    for (name, fd, an) in [
        ("W", fd_w, mat_entries(&g.w)),
        ("U", fd_u, mat_entries(&g.u)),
        ("b", fd_b, col_entries(&g.b)),
        ("v", fd_v, col_entries(&g.v)),
    ] {
        let e = rel_err(&fd, &an);
        assert!(e <= 1e-4, "block {name}: relative error {e:e}");
    }
}

#[test]
fn tied_unroll_at_depth_200_matches_implicit_gradient() {
    let p = KernelParams::new(0.125, 0.875, 0.0, 2.0).unwrap();
    for seed in 0..3 {
        let w = DeqWeights::sample(128, 8, p, seed, 0);
        let (x, y) = (unit_vector(seed, 0, 8), unit_vector(seed, 1, 8));
        let ift = ift_ntk_pair(&w, &x, &y, &tight()).unwrap().total;
        let unrolled = finite_depth_empirical_ntk(&w, &x, &y, 200, LayerWeights::Tied).unwrap().total;
        assert!(((ift - unrolled) / ift).abs() <= 1e-6, "seed {seed}: {ift} vs {unrolled}");
    }
}

#[test]
fn one_layer_monte_carlo_mean_matches_limit() {
    let p = KernelParams::new(0.0, 0.6, 0.4, 1.5).unwrap();
    let (x, y) = (unit_vector(5, 0, 6), unit_vector(5, 1, 6));
    let dot: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
    let target = finite_depth_ntk(dot, 1, &p).unwrap().output;
    for mode in [LayerWeights::Tied, LayerWeights::Untied] {
        let vals: Vec<f64> = (0..100)
            .map(|t| {
                let w = DeqWeights::sample(256, 6, p, 1000 + t, 0);
                finite_depth_empirical_ntk(&w, &x, &y, 1, mode).unwrap().total
            })
            .collect();
        let k = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / k;
        let se = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0) / k).sqrt();
        assert!((mean - target).abs() <= 4.0 * se, "{mode:?}: mean {mean} target {target} se {se}");
    }
}

#[test]
fn forward_converges_for_almost_every_seed() {
    let p = KernelParams::new(0.125, 0.875, 0.0, 1.0).unwrap();
    let x = unit_vector(3, 0, 8);
    let ok = (0..100)
        .filter(|&s| deq_forward(&DeqWeights::sample(256, 8, p, s, 0), &x, &ForwardOptions::default()).is_ok())
        .count();
    assert!(ok >= 99, "{ok}/100 converged");
}

#[test]
fn operator_norm_concentrates() {
    let n = 1000;
    let p = KernelParams::new(0.25, 0.75, 0.0, 1.0).unwrap();
    let bound = 2.0 * (n as f64).sqrt() + 3.0 * (n as f64).sqrt() * 0.1;
    let within = (0..100).filter(|&s| operator_norm(&DeqWeights::sample(n, 1, p, s, 0).w).unwrap() <= bound).count();
    assert!(within >= 99, "{within}/100 below {bound}");
}

#[test]
fn spectrum_sums_to_frobenius_norm() {
    let p = KernelParams::new(0.25, 0.75, 0.0, 1.0).unwrap().linear();
    let w = DeqWeights::sample(60, 1, p, 4, 0);
    let ev = empirical_spectrum(&w).unwrap();
    let a = w.recurrent();
    let fro: f64 = (0..60)
        .flat_map(|i| (0..60).map(move |j| (i, j)))
        .map(|(i, j)| (if i == j { 1.0 } else { 0.0 } - a[(i, j)]).powi(2))
        .sum();
    assert!((ev.iter().sum::<f64>() - fro).abs() < 1e-10 * fro);
    assert!(ev.iter().all(|&e| e >= 0.0));
}
