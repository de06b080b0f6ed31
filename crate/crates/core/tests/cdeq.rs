use deqntk_core::cdeq::{
    build_normalizer, cdeq_ntk, cdeq_sigma_fixed_point, cdeq_theta, cdeq_theta_direct, input_covariance, sigma_map,
    CdeqConfig, ConvImage, ConvKernelTensor,
};
use deqntk_core::ntk::theta_deq;
use deqntk_core::KernelParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn random_image(rng: &mut ChaCha8Rng, p: usize, q: usize, c: usize) -> ConvImage {
    let mut data = Vec::with_capacity(p * q * c);
    for _ in 0..p * q {
        let v: Vec<f64> = (0..c).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        data.extend(v.iter().map(|a| a / n));
    }
    ConvImage::new(p, q, c, data).unwrap()
}

#[test]
fn self_pair_keeps_unit_diagonal() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_image(&mut rng, 6, 6, 3);
    let params = KernelParams::new(0.65, 0.35, 0.0, 1.0).unwrap();
    let fp = cdeq_sigma_fixed_point(&x, &x, &params, &CdeqConfig::default()).unwrap();
    for i in 0..6 {
        for j in 0..6 {
            assert!((fp.sigma.get(i, j, i, j) - 1.0).abs() < 1e-10);
            for i2 in 0..6 {
                for j2 in 0..6 {
                    assert_eq!(fp.sigma.get(i, j, i2, j2), fp.sigma.get(i2, j2, i, j));
                }
            }
        }
    }
    assert!(fp.diag_x.iter().all(|d| (d - 1.0).abs() < 1e-12));
}

#[test]
fn single_pixel_filter_decouples_into_scalar_kernels() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (x, y) = (random_image(&mut rng, 3, 4, 2), random_image(&mut rng, 3, 4, 2));
    let params = KernelParams::new(0.6, 0.4, 0.0, 1.0).unwrap();
    let cfg = CdeqConfig { filter: 1, sigma_tol: 1e-13, sigma_max_iter: 500, ..CdeqConfig::default() };
    let fp = cdeq_sigma_fixed_point(&x, &y, &params, &cfg).unwrap();
    let mut expected = 0.0;
    for i in 0..3 {
        for j in 0..4 {
            for i2 in 0..3 {
                for j2 in 0..4 {
                    let dot: f64 = x.pixel(i, j).iter().zip(y.pixel(i2, j2)).map(|(a, b)| a * b).sum();
                    let r = theta_deq(dot, &params).unwrap();
                    assert!((fp.sigma.get(i, j, i2, j2) - r.rho_star).abs() < 1e-8);
                    if (i, j) == (i2, j2) {
                        expected += r.rho_star / (1.0 - r.sigma_dot_star);
                    }
                }
            }
        }
    }
    let got = cdeq_ntk(&x, &y, &params, &cfg).unwrap();
    assert!((got - expected).abs() < 1e-8 * expected.abs().max(1.0), "{got} vs {expected}");
}

#[test]
fn iterative_theta_matches_direct_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (x, y) = (random_image(&mut rng, 4, 4, 3), random_image(&mut rng, 4, 4, 3));
    let params = KernelParams::new(0.65, 0.35, 0.0, 1.0).unwrap();
    let cfg = CdeqConfig::default();
    let fp = cdeq_sigma_fixed_point(&x, &y, &params, &cfg).unwrap();
    let (it, _) = cdeq_theta(&fp.k, &fp.k_dot, 3, 1e-12, 100_000).unwrap();
    let direct = cdeq_theta_direct(&fp.k, &fp.k_dot, 3).unwrap();
    assert!((it - direct).abs() < 1e-9 * direct.abs(), "{it} vs {direct}");
}

#[test]
fn covariance_stage_converges_within_budget() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let params = KernelParams::new(0.65, 0.35, 0.0, 1.0).unwrap();
    for _ in 0..3 {
        let (x, y) = (random_image(&mut rng, 8, 8, 3), random_image(&mut rng, 8, 8, 3));
        let fp = cdeq_sigma_fixed_point(&x, &y, &params, &CdeqConfig::default()).unwrap();
        assert!(fp.iterations <= 30 && fp.change <= 1e-6);
    }
}

#[test]
fn covariance_map_is_sup_norm_contraction() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (x, y) = (random_image(&mut rng, 5, 5, 3), random_image(&mut rng, 5, 5, 3));
    let k0 = input_covariance(&x, &y).unwrap();
    let norm = build_normalizer(5, 5, 3).unwrap();
    let ones = vec![1.0; 25];
    for &w in &[0.35, 0.65, 0.9] {
        let params = KernelParams::new(w, 1.0 - w, 0.0, 1.0).unwrap();
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let mut draw = || {
                let v: Vec<f64> = (0..625).map(|_| rng.random_range(-1.0..1.0)).collect();
                ConvKernelTensor::from_vec(5, 5, v).unwrap()
            };
            let (a, b) = (draw(), draw());
            let fa = sigma_map(&a, &k0, &ones, &ones, &norm, &params).unwrap();
            let fb = sigma_map(&b, &k0, &ones, &ones, &norm, &params).unwrap();
            worst = worst.max(fa.max_abs_diff(&fb) / a.max_abs_diff(&b));
        }
        assert!(worst < 1.0 && worst <= w + 1e-12, "σ_W²={w}: ratio {worst}");
    }
}
