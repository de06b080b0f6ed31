use deqntk::gram::{
    assemble_cdeq_gram, assemble_gram, assemble_gram_depths, regress_and_score, theta_vs_dot_sweep, KernelTag,
};
use deqntk::rng::{normals, unit_vector, Block};
use deqntk_core::cdeq::{CdeqConfig, ConvImage};
use deqntk_core::ntk::theta_deq;
use deqntk_core::KernelParams;
use faer::{Mat, Side};
use proptest::prelude::*;

fn deq() -> KernelParams {
    KernelParams::new(0.6, 0.3, 0.1, 1.0).unwrap()
}

fn unit_rows(n: usize, m: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..n as u32).map(|t| unit_vector(seed, t, m)).collect()
}

fn refs(rows: &[Vec<f64>]) -> Vec<&[f64]> {
    rows.iter().map(Vec::as_slice).collect()
}

fn min_max_eig(m: &Mat<f64>) -> (f64, f64) {
    let ev = m.self_adjoint_eigenvalues(Side::Lower).unwrap();
    ev.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &e| (a.min(e), b.max(e)))
}

#[test]
fn deq_gram_matches_scalar_loop() {
    let rows = unit_rows(10, 7, 1);
    let g = assemble_gram(&refs(&rows), KernelTag::DeqNtk, &deq(), None).unwrap();
    let self_value = theta_deq(1.0, &deq()).unwrap().theta;
    for i in 0..10 {
        for j in 0..10 {
            let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
            let expected = if i == j { self_value } else { theta_deq(dot, &deq()).unwrap().theta };
            assert_eq!(g.values[(i, j)], expected);
        }
    }
}

#[test]
fn single_row_and_duplicates() {
    let rows = unit_rows(3, 4, 2);
    let one = assemble_gram(&refs(&rows[..1]), KernelTag::DeqNtk, &deq(), None).unwrap();
    assert_eq!(one.values[(0, 0)], theta_deq(1.0, &deq()).unwrap().theta);
    let dup = vec![rows[0].clone(), rows[1].clone(), rows[0].clone()];
    let g = assemble_gram(&refs(&dup), KernelTag::DeqNtk, &deq(), None).unwrap();
    for j in 0..3 {
        assert_eq!(g.values[(0, j)], g.values[(2, j)]);
    }
}

#[test]
fn deq_gram_is_psd() {
    let rows = unit_rows(200, 30, 3);
    let g = assemble_gram(&refs(&rows), KernelTag::DeqNtk, &deq(), None).unwrap();
    let (lo, hi) = min_max_eig(&g.values);
    assert!(lo >= -1e-8 * hi, "min eigenvalue {lo}, max {hi}");
}

#[test]
fn worker_count_does_not_change_bits() {
    let rows = unit_rows(40, 12, 4);
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| assemble_gram(&refs(&rows), KernelTag::DeqNtk, &deq(), None).unwrap().values)
    };
    let (a, b) = (run(1), run(4));
    for i in 0..40 {
        for j in 0..40 {
            assert_eq!(a[(i, j)].to_bits(), b[(i, j)].to_bits());
        }
    }
}

#[test]
fn multi_depth_grams_match_single_depth() {
    let rows = unit_rows(6, 5, 5);
    let p = KernelParams::new(0.6, 0.0, 0.4, 1.0).unwrap();
    let all = assemble_gram_depths(&refs(&rows), KernelTag::VanillaNtk, &p, &[3, 40]).unwrap();
    for g in &all {
        let single = assemble_gram(&refs(&rows), KernelTag::VanillaNtk, &p, g.depth).unwrap();
        assert_eq!(g.values, single.values);
    }
}

fn labelled(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    // Three clusters around fixed directions; labels are the cluster index.
    let centres = unit_rows(3, 8, seed);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for k in 0..n {
        let c = k % 3;
        let noise = normals(seed, k as u32, Block::Input, 2, 8);
        let mut v: Vec<f64> = centres[c].iter().zip(&noise).map(|(a, e)| a + 0.3 * e).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.iter_mut().for_each(|a| *a /= norm);
        rows.push(v);
        labels.push(c);
    }
    (rows, labels)
}

#[test]
fn permuting_the_data_permutes_the_gram() {
    let (rows, labels) = labelled(30, 6);
    let perm: Vec<usize> = (0..30).map(|i| (i * 7) % 30).collect();
    let prow: Vec<Vec<f64>> = perm.iter().map(|&i| rows[i].clone()).collect();
    let g = assemble_gram(&refs(&rows), KernelTag::DeqNtk, &deq(), None).unwrap().values;
    let gp = assemble_gram(&refs(&prow), KernelTag::DeqNtk, &deq(), None).unwrap().values;
    for i in 0..30 {
        for j in 0..30 {
            assert_eq!(gp[(i, j)], g[(perm[i], perm[j])]);
        }
    }
    let split = |m: &Mat<f64>| {
        let tr: Vec<usize> = (0..20).collect();
        let te: Vec<usize> = (20..30).collect();
        (Mat::from_fn(20, 20, |i, j| m[(tr[i], tr[j])]), Mat::from_fn(10, 20, |i, j| m[(te[i], tr[j])]))
    };
    // Same train and test sets, permuted within each.
    let inner: Vec<usize> = (0..20).map(|i| (i * 3) % 20).chain((20..30).rev()).collect();
    let gi = Mat::from_fn(30, 30, |i, j| g[(inner[i], inner[j])]);
    let li: Vec<usize> = inner.iter().map(|&i| labels[i]).collect();
    let (k, c) = split(&g);
    let (ki, ci) = split(&gi);
    let a = regress_and_score(&k, &c, &labels[..20], &labels[20..], 3, 0.0).unwrap();
    let b = regress_and_score(&ki, &ci, &li[..20], &li[20..], 3, 0.0).unwrap();
    assert_eq!(a.accuracy, b.accuracy);
}

#[test]
fn clustered_data_is_learned() {
    let (rows, labels) = labelled(60, 7);
    let g = assemble_gram(&refs(&rows), KernelTag::DeqNtk, &deq(), None).unwrap();
    let tr: Vec<usize> = (0..45).collect();
    let te: Vec<usize> = (45..60).collect();
    let r = regress_and_score(&g.block(&tr, &tr), &g.block(&te, &tr), &labels[..45], &labels[45..], 3, 0.0).unwrap();
    assert!(r.accuracy >= 0.9, "{}", r.accuracy);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn argmax_invariant_under_joint_scaling(scale in 0.01f64..100.0, reg in 0.0f64..1.0) {
        let (rows, labels) = labelled(24, 8);
        let g = assemble_gram(&refs(&rows), KernelTag::DeqNtk, &deq(), None).unwrap();
        let tr: Vec<usize> = (0..16).collect();
        let te: Vec<usize> = (16..24).collect();
        let (k, c) = (g.block(&tr, &tr), g.block(&te, &tr));
        let ks = Mat::from_fn(16, 16, |i, j| scale * k[(i, j)]);
        let cs = Mat::from_fn(8, 16, |i, j| scale * c[(i, j)]);
        let a = regress_and_score(&k, &c, &labels[..16], &labels[16..], 3, reg).unwrap();
        let b = regress_and_score(&ks, &cs, &labels[..16], &labels[16..], 3, reg).unwrap();
        prop_assert_eq!(a.predictions, b.predictions);
    }
}

#[test]
fn vanilla_kernel_freezes_with_depth() {
    let p = KernelParams::new(0.6, 0.0, 0.4, 1.0).unwrap();
    let rows = theta_vs_dot_sweep(&p, &[1, 500], 41).unwrap();
    let spread = |d: usize| {
        let v: Vec<f64> = rows.iter().filter(|r| r.1 == d).map(|r| r.2).collect();
        let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        (hi - lo) / (v.iter().sum::<f64>() / v.len() as f64)
    };
    assert!(spread(1) > 0.5);
    assert!(spread(500) < 0.01, "{}", spread(500));
}

#[test]
fn injected_kernel_stays_increasing_in_dot() {
    let rows = theta_vs_dot_sweep(&deq(), &[500], 201).unwrap();
    assert!(rows.windows(2).all(|w| w[1].2 > w[0].2));
    let fixed: Vec<f64> = (0..=200).map(|k| theta_deq(-1.0 + k as f64 / 100.0, &deq()).unwrap().theta).collect();
    assert!(fixed.windows(2).all(|w| w[1] > w[0]));
}

fn random_images(count: usize, size: usize, seed: u64) -> Vec<ConvImage> {
    (0..count as u32)
        .map(|t| {
            let mut d = normals(seed, t, Block::Input, 3, size * size * 3);
            for px in d.chunks_exact_mut(3) {
                let n = px.iter().map(|v| v * v).sum::<f64>().sqrt();
                px.iter_mut().for_each(|v| *v /= n);
            }
            ConvImage::new(size, size, 3, d).unwrap()
        })
        .collect()
}

#[test]
fn cdeq_gram_is_symmetric_psd() {
    let p = KernelParams::new(0.65, 0.35, 0.0, 1.0).unwrap();
    let g = assemble_cdeq_gram(&random_images(8, 6, 9), &p, &CdeqConfig::default()).unwrap();
    let (lo, hi) = min_max_eig(&g.values);
    assert!(lo >= -1e-8 * hi, "{lo} {hi}");
    assert!(g.values[(0, 0)] > 0.0);
}
