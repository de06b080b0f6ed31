use deqntk_core::spectra::{
    closed_form_endpoints, density, integrate_density, integrate_inverse_eig, support_endpoints,
    SpectralDensitySamples, DEFAULT_B_EPS,
};

#[test]
fn inverse_moment_matches_resolvent_trace() {
    for &s in &[0.1, 0.25, 0.5, 0.75] {
        let v = integrate_inverse_eig(s).unwrap();
        assert!((v - 1.0 / (1.0 - s)).abs() < 1e-3, "σ_W²={s}: {v}");
    }
}

#[test]
fn density_is_a_probability_measure() {
    for &s in &[0.1, 0.25, 0.5, 0.75, 0.9] {
        let m = integrate_density(s, |_| 1.0, 1e-7).unwrap();
        assert!((m.value - 1.0).abs() < 1e-3, "σ_W²={s}: mass {}", m.value);
        // First moment: E[λ] = tr((I-A)ᵀ(I-A))/n → 1 + σ_W².
        let m1 = integrate_density(s, |x| x, 1e-7).unwrap();
        assert!((m1.value - (1.0 + s)).abs() < 1e-3, "σ_W²={s}: mean {}", m1.value);
    }
}

#[test]
fn support_is_bounded_away_from_zero() {
    for k in 1..=9 {
        let s = k as f64 / 10.0;
        let (l, u) = support_endpoints(s).unwrap();
        assert!(l > 0.0 && u > l);
        let (cl, cu) = closed_form_endpoints(s);
        assert!((l - cl).abs() < 1e-9 && (u - cu).abs() < 1e-9);
    }
}

#[test]
fn outside_support_has_no_mass() {
    let (l, u) = support_endpoints(0.25).unwrap();
    for &x in &[0.0, 0.5 * l, u + 0.1, u + 5.0] {
        assert!(density(x, 0.25, DEFAULT_B_EPS).unwrap() < 1e-6);
    }
}

#[test]
fn small_variance_concentrates_at_one() {
    let t = SpectralDensitySamples::tabulate(1e-4, 401).unwrap();
    let median = t.grid.iter().find(|&&(x, _)| t.cdf(x) >= 0.5 * t.mass()).unwrap().0;
    assert!((median - 1.0).abs() < 0.01, "{median}");
}
