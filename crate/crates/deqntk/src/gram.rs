//! Gram matrices, kernel regression and the depth experiments built on them.

use std::fmt;
use std::str::FromStr;

use deqntk_core::cdeq::{cdeq_ntk, CdeqConfig, ConvImage};
use deqntk_core::ntk::{finite_depth_ntk, finite_depth_outputs, theta_deq, theta_linear_deq};
use deqntk_core::KernelParams;
use faer::linalg::solvers::Solve;
use faer::{Mat, Side};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{stream, Block};

/// Which kernel a Gram matrix holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelTag {
    DeqNtk,
    FiniteDepthNtk,
    VanillaNtk,
    LinearDeq,
    CdeqNtk,
}

impl KernelTag {
    pub fn as_str(self) -> &'static str {
        match self {
            KernelTag::DeqNtk => "deq-ntk",
            KernelTag::FiniteDepthNtk => "finite-depth-ntk",
            KernelTag::VanillaNtk => "vanilla-ntk",
            KernelTag::LinearDeq => "linear-deq",
            KernelTag::CdeqNtk => "cdeq-ntk",
        }
    }

    fn needs_depth(self) -> bool {
        matches!(self, KernelTag::FiniteDepthNtk | KernelTag::VanillaNtk)
    }
}

impl fmt::Display for KernelTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KernelTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [KernelTag::DeqNtk, KernelTag::FiniteDepthNtk, KernelTag::VanillaNtk, KernelTag::LinearDeq, KernelTag::CdeqNtk]
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown kernel `{s}`")))
    }
}

/// Symmetric kernel matrix over a dataset.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    pub values: Mat<f64>,
    pub kernel_tag: KernelTag,
    pub params: KernelParams,
    pub depth: Option<usize>,
}

impl GramMatrix {
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Block `values[rows, cols]`.
    pub fn block(&self, rows: &[usize], cols: &[usize]) -> Mat<f64> {
        Mat::from_fn(rows.len(), cols.len(), |i, j| self.values[(rows[i], cols[j])])
    }
}

fn upper_triangle(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect()
}

/// Fill a symmetric matrix from per-entry values of the upper triangle,
/// evaluated in parallel. Each entry is a pure function of `(i, j)`, so the
/// result does not depend on the number of workers.
fn fill_symmetric<F>(n: usize, entry: F) -> Result<Mat<f64>>
where
    F: Fn(usize, usize) -> deqntk_core::Result<f64> + Sync,
{
    let pairs = upper_triangle(n);
    let vals: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| entry(i, j).map_err(|source| Error::Entry { i, j, source }))
        .collect::<Result<_>>()?;
    let mut m = Mat::zeros(n, n);
    for (&(i, j), v) in pairs.iter().zip(vals) {
        m[(i, j)] = v;
        m[(j, i)] = v;
    }
    Ok(m)
}

/// Inner products closer than this to `±1` are snapped to `±1`.
pub const UNIT_DOT_SNAP: f64 = 1e-12;

/// `aᵀb` for unit rows, with values within [`UNIT_DOT_SNAP`] of `±1` snapped.
///
/// The kernels have a square-root singularity in `κ0` at `±1`, so rounding in
/// `xᵀx` alone would otherwise move diagonal entries by about `1e-8`.
pub fn unit_dot(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    if (d.abs() - 1.0).abs() <= UNIT_DOT_SNAP {
        d.signum()
    } else {
        d
    }
}

fn check_dense_params(tag: KernelTag, params: &KernelParams, depth: Option<usize>) -> Result<()> {
    params.validate()?;
    match tag {
        KernelTag::CdeqNtk => Err(Error::Config("cdeq-ntk needs image inputs; use assemble_cdeq_gram".into())),
        t if t.needs_depth() && depth.is_none() => Err(Error::Config(format!("{t} needs a depth"))),
        KernelTag::VanillaNtk if params.sigma_u_sq != 0.0 => {
            Err(Error::Config("vanilla-ntk has no input injection; set sigma_u_sq = 0".into()))
        }
        KernelTag::DeqNtk | KernelTag::LinearDeq => Ok(params.require_contractive()?),
        _ => Ok(()),
    }
}

/// Gram matrix of a dense kernel over unit-norm rows.
pub fn assemble_gram(
    rows: &[&[f64]],
    tag: KernelTag,
    params: &KernelParams,
    depth: Option<usize>,
) -> Result<GramMatrix> {
    check_dense_params(tag, params, depth)?;
    let values = fill_symmetric(rows.len(), |i, j| {
        let dot = unit_dot(rows[i], rows[j]);
        match tag {
            KernelTag::DeqNtk => Ok(theta_deq(dot, params)?.theta),
            KernelTag::LinearDeq => theta_linear_deq(dot, params),
            KernelTag::FiniteDepthNtk | KernelTag::VanillaNtk => {
                Ok(finite_depth_ntk(dot, depth.unwrap_or_default(), params)?.output)
            }
            KernelTag::CdeqNtk => unreachable!("rejected by check_dense_params"),
        }
    })?;
    Ok(GramMatrix { values, kernel_tag: tag, params: *params, depth })
}

/// Finite-depth Gram matrices at several depths from one recursion pass per entry.
pub fn assemble_gram_depths(
    rows: &[&[f64]],
    tag: KernelTag,
    params: &KernelParams,
    depths: &[usize],
) -> Result<Vec<GramMatrix>> {
    if !tag.needs_depth() {
        return Err(Error::Config(format!("{tag} is not a finite-depth kernel")));
    }
    check_dense_params(tag, params, depths.first().copied())?;
    let n = rows.len();
    let pairs = upper_triangle(n);
    let vals: Vec<Vec<f64>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            finite_depth_outputs(unit_dot(rows[i], rows[j]), depths, params).map_err(|source| Error::Entry {
                i,
                j,
                source,
            })
        })
        .collect::<Result<_>>()?;
    Ok(depths
        .iter()
        .enumerate()
        .map(|(k, &d)| {
            let mut m = Mat::zeros(n, n);
            for (&(i, j), v) in pairs.iter().zip(&vals) {
                m[(i, j)] = v[k];
                m[(j, i)] = v[k];
            }
            GramMatrix { values: m, kernel_tag: tag, params: *params, depth: Some(d) }
        })
        .collect())
}

/// Convolutional DEQ-NTK Gram matrix over unit-pixel images.
pub fn assemble_cdeq_gram(images: &[ConvImage], params: &KernelParams, config: &CdeqConfig) -> Result<GramMatrix> {
    for img in images {
        img.check_unit_pixels()?;
    }
    let values = fill_symmetric(images.len(), |i, j| cdeq_ntk(&images[i], &images[j], params, config))?;
    Ok(GramMatrix { values, kernel_tag: KernelTag::CdeqNtk, params: *params, depth: None })
}

/// One-hot targets with `0.9` for the class and `-0.1` elsewhere.
#[derive(Debug, Clone)]
pub struct EncodedLabels {
    pub values: Mat<f64>,
}

pub fn encode_labels(labels: &[usize], classes: usize) -> Result<EncodedLabels> {
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Config(format!("label {bad} out of range for {classes} classes")));
    }
    Ok(EncodedLabels { values: Mat::from_fn(labels.len(), classes, |i, c| if labels[i] == c { 0.9 } else { -0.1 }) })
}

/// Row-wise argmax, ties to the lowest index.
pub fn argmax_rows(m: &Mat<f64>) -> Vec<usize> {
    (0..m.nrows()).map(|i| (1..m.ncols()).fold(0, |best, c| if m[(i, c)] > m[(i, best)] { c } else { best })).collect()
}

/// Jitter multipliers (relative to the mean diagonal) tried in order.
pub const JITTER_LADDER: [f64; 5] = [0.0, 1e-10, 1e-8, 1e-6, 1e-4];

/// Outcome of one kernel regression.
#[derive(Debug, Clone)]
pub struct Regression {
    pub accuracy: f64,
    pub predictions: Vec<usize>,
    /// Ridge `r = reg_eps · (tr K / N) / N`.
    pub ridge: f64,
    /// Jitter added on top of the ridge to make the factorization succeed.
    pub jitter: f64,
}

/// Solve `(K + r I) α = Y` and score `argmax(K_cross α)` against `test_labels`.
///
/// Without regularization a system that only factors thanks to the jitter
/// ladder is reported as singular.
pub fn regress_and_score(
    train_gram: &Mat<f64>,
    cross_gram: &Mat<f64>,
    train_labels: &[usize],
    test_labels: &[usize],
    classes: usize,
    reg_eps: f64,
) -> Result<Regression> {
    let n = train_gram.nrows();
    if train_gram.ncols() != n
        || cross_gram.ncols() != n
        || train_labels.len() != n
        || cross_gram.nrows() != test_labels.len()
    {
        return Err(Error::Config("regression shapes do not match".into()));
    }
    if !(reg_eps >= 0.0 && reg_eps.is_finite()) {
        return Err(Error::Config(format!("reg_eps must be a finite nonnegative number, got {reg_eps}")));
    }
    let y = encode_labels(train_labels, classes)?;
    let mean_diag = (0..n).map(|i| train_gram[(i, i)]).sum::<f64>() / n as f64;
    let ridge = reg_eps * mean_diag / n as f64;
    let mut worst_condition = f64::INFINITY;
    for &level in &JITTER_LADDER {
        let jitter = level * mean_diag;
        let shifted = Mat::from_fn(n, n, |i, j| train_gram[(i, j)] + if i == j { ridge + jitter } else { 0.0 });
        let Ok(llt) = shifted.llt(Side::Lower) else { continue };
        let l = llt.L();
        let pivots: Vec<f64> = (0..n).map(|i| l[(i, i)] * l[(i, i)]).collect();
        let (lo, hi) = pivots.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &p| (lo.min(p), hi.max(p)));
        worst_condition = hi / lo;
        let floor = (10.0 * level).max(100.0 * n as f64 * f64::EPSILON) * mean_diag;
        if reg_eps == 0.0 && lo <= floor {
            return Err(Error::Singular { condition: worst_condition });
        }
        let alpha = llt.solve(&y.values);
        let scores = cross_gram * &alpha;
        let predictions = argmax_rows(&scores);
        let correct = predictions.iter().zip(test_labels).filter(|(p, t)| p == t).count();
        let accuracy = if test_labels.is_empty() { 0.0 } else { correct as f64 / test_labels.len() as f64 };
        return Ok(Regression { accuracy, predictions, ridge, jitter });
    }
    Err(Error::Singular { condition: worst_condition })
}

/// Labelled dense samples, borrowed.
#[derive(Debug, Clone, Copy)]
pub struct LabelledRows<'a> {
    pub rows: &'a [&'a [f64]],
    pub labels: &'a [usize],
}

/// Settings of a depth sweep.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub depths: Vec<usize>,
    pub n_train: usize,
    pub n_test: usize,
    pub reps: u32,
    pub seed: u64,
    pub reg_eps: f64,
    pub classes: usize,
    pub params_deq: KernelParams,
    pub params_vanilla: KernelParams,
}

/// One regression of a depth sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub kernel: KernelTag,
    pub depth: usize,
    pub rep: u32,
    pub accuracy: f64,
    /// Number of different classes among the test predictions.
    pub distinct_predictions: usize,
}

/// Draw `k` distinct indices out of `n` from the split stream of `rep`.
pub fn sample_indices(n: usize, k: usize, seed: u64, rep: u32, which: u32) -> Result<Vec<usize>> {
    if k > n {
        return Err(Error::Config(format!("cannot draw {k} samples from {n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(seed, rep, Block::Split, which));
    idx.truncate(k);
    Ok(idx)
}

/// Finite-depth regression accuracy of the injected (`finite-depth-ntk`) and
/// uninjected (`vanilla-ntk`) kernels over resampled train/test splits.
pub fn depth_sweep(train: LabelledRows<'_>, test: LabelledRows<'_>, cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    if cfg.depths.is_empty() || cfg.reps == 0 {
        return Err(Error::Config("depth sweep needs at least one depth and one repetition".into()));
    }
    let mut out = Vec::new();
    for rep in 0..cfg.reps {
        let tr = sample_indices(train.rows.len(), cfg.n_train, cfg.seed, rep, 0)?;
        let te = sample_indices(test.rows.len(), cfg.n_test, cfg.seed, rep, 1)?;
        let pool: Vec<&[f64]> = tr.iter().map(|&i| train.rows[i]).chain(te.iter().map(|&i| test.rows[i])).collect();
        let tr_labels: Vec<usize> = tr.iter().map(|&i| train.labels[i]).collect();
        let te_labels: Vec<usize> = te.iter().map(|&i| test.labels[i]).collect();
        let train_idx: Vec<usize> = (0..tr.len()).collect();
        let test_idx: Vec<usize> = (tr.len()..pool.len()).collect();
        for (tag, params) in
            [(KernelTag::FiniteDepthNtk, &cfg.params_deq), (KernelTag::VanillaNtk, &cfg.params_vanilla)]
        {
            let grams = assemble_gram_depths(&pool, tag, params, &cfg.depths)?;
            let scored: Vec<Result<SweepRow>> = grams
                .par_iter()
                .map(|g| {
                    let r = regress_and_score(
                        &g.block(&train_idx, &train_idx),
                        &g.block(&test_idx, &train_idx),
                        &tr_labels,
                        &te_labels,
                        cfg.classes,
                        cfg.reg_eps,
                    )?;
                    let mut seen = r.predictions.clone();
                    seen.sort_unstable();
                    seen.dedup();
                    Ok(SweepRow {
                        kernel: tag,
                        depth: g.depth.unwrap_or_default(),
                        rep,
                        accuracy: r.accuracy,
                        distinct_predictions: seen.len(),
                    })
                })
                .collect();
            for row in scored {
                out.push(row?);
            }
        }
    }
    Ok(out)
}

/// Mean and normal-approximation 95% interval of one (kernel, depth) cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSummary {
    pub kernel: KernelTag,
    pub depth: usize,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub reps: usize,
}

pub fn summarize(rows: &[SweepRow]) -> Vec<SweepSummary> {
    let mut keys: Vec<(KernelTag, usize)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.kernel, r.depth)) {
            keys.push((r.kernel, r.depth));
        }
    }
    keys.into_iter()
        .map(|(kernel, depth)| {
            let acc: Vec<f64> =
                rows.iter().filter(|r| r.kernel == kernel && r.depth == depth).map(|r| r.accuracy).collect();
            let k = acc.len() as f64;
            let mean = acc.iter().sum::<f64>() / k;
            let var = if acc.len() > 1 { acc.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (k - 1.0) } else { 0.0 };
            let half = 1.96 * (var / k).sqrt();
            SweepSummary { kernel, depth, mean, ci_low: mean - half, ci_high: mean + half, reps: acc.len() }
        })
        .collect()
}

/// Hidden-layer kernel `Θ^(d)` on an evenly spaced grid of `points ≥ 2` dot products in `[-1, 1]`.
pub fn theta_vs_dot_sweep(params: &KernelParams, depths: &[usize], points: usize) -> Result<Vec<(f64, usize, f64)>> {
    if points < 2 {
        return Err(Error::Config("dot grid needs at least two points".into()));
    }
    let mut out = Vec::with_capacity(points * depths.len());
    for &d in depths {
        for k in 0..points {
            let dot = -1.0 + 2.0 * k as f64 / (points - 1) as f64;
            out.push((dot, d, finite_depth_ntk(dot, d, params)?.theta));
        }
    }
    Ok(out)
}
