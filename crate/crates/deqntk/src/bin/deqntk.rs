use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use deqntk::config::RunConfig;
use deqntk::data::{load_cifar10, load_mnist, Dataset, Normalization, Split};
use deqntk::empirical::ForwardOptions;
use deqntk::experiments::{ecdf_sup_distance, median, residual_trial, spectrum_trial, trace_trial};
use deqntk::gram::{
    assemble_cdeq_gram, assemble_gram, depth_sweep, regress_and_score, summarize, theta_vs_dot_sweep, LabelledRows,
    SweepConfig,
};
use deqntk::report::{float, write_manifest, Table};
use deqntk::{Error, Result};
use deqntk_core::cdeq::{CdeqConfig, ConvImage};
use deqntk_core::ntk::{finite_depth_ntk, theta_deq, theta_linear_deq};
use deqntk_core::spectra::SpectralDensitySamples;
use deqntk_core::Activation;
use faer::Side;
use rayon::prelude::*;

/// Kernels of deep equilibrium networks: exact values, finite-width checks,
/// spectra and kernel regression. Every command writes CSV tables and a
/// `manifest.txt` into the output directory.
#[derive(Parser)]
#[command(name = "deqntk", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// Configuration file of `key = value` lines; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Extra `key=value` settings, applied after the file and before flags.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Recurrent weight variance `σ_W²`
    #[arg(long, global = true)]
    sw2: Option<f64>,
    /// Input weight variance `σ_U²`
    #[arg(long, global = true)]
    su2: Option<f64>,
    /// Bias variance `σ_b²`
    #[arg(long, global = true)]
    sb2: Option<f64>,
    /// Readout variance `σ_v²`
    #[arg(long, global = true)]
    sv2: Option<f64>,
    /// `relu` (normalized ReLU) or `linear`.
    #[arg(long, global = true)]
    activation: Option<String>,
    /// Base seed of every random stream
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Kernel value at one dot product, or a Θ-vs-dot table over depths.
    Kernel {
        #[arg(long, allow_hyphen_values = true)]
        dot: Option<f64>,
        /// Finite depth; omit for the infinite-depth fixed point.
        #[arg(long)]
        depth: Option<usize>,
        /// Comma-separated depths for the table.
        #[arg(long)]
        depths: Option<String>,
    },
    /// Regression accuracy against depth for injected and uninjected kernels.
    DepthSweep {
        #[arg(long)]
        dataset: Option<String>,
        #[arg(long)]
        depths: Option<String>,
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        n_test: Option<usize>,
        #[arg(long)]
        reps: Option<u32>,
        #[arg(long)]
        reg_eps: Option<f64>,
    },
    /// Relative gap between finite-width and limiting NTK across widths.
    Residual {
        #[arg(long)]
        widths: Option<String>,
        #[arg(long)]
        trials: Option<u32>,
    },
    /// `(1/n) tr(HᵀH)` of the linear network across trials.
    Trace {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        trials: Option<u32>,
    },
    /// Empirical eigenvalues of `(I - A)ᵀ(I - A)` and the limiting density.
    Spectrum {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        points: Option<usize>,
    },
    /// Kernel regression on a dataset subset.
    Regress {
        #[arg(long)]
        dataset: Option<String>,
        #[arg(long)]
        kernel: Option<String>,
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        n_test: Option<usize>,
        #[arg(long)]
        reg_eps: Option<f64>,
    },
    /// Convolutional kernel Gram matrix over small unit-pixel images.
    Cdeq {
        /// Crop images from this dataset instead of drawing random ones.
        #[arg(long)]
        dataset: Option<String>,
        #[arg(long)]
        images: Option<usize>,
        #[arg(long)]
        image_size: Option<usize>,
        #[arg(long)]
        filter: Option<usize>,
    },
}

impl Cmd {
    fn name(&self) -> &'static str {
        match self {
            Cmd::Kernel { .. } => "kernel",
            Cmd::DepthSweep { .. } => "depth-sweep",
            Cmd::Residual { .. } => "residual",
            Cmd::Trace { .. } => "trace",
            Cmd::Spectrum { .. } => "spectrum",
            Cmd::Regress { .. } => "regress",
            Cmd::Cdeq { .. } => "cdeq",
        }
    }

    /// Command-specific flags as config keys.
    fn overrides(&self) -> Vec<(&'static str, String)> {
        fn push<T: ToString>(v: &mut Vec<(&'static str, String)>, k: &'static str, x: &Option<T>) {
            if let Some(x) = x {
                v.push((k, x.to_string()));
            }
        }
        let mut v = Vec::new();
        match self {
            Cmd::Kernel { dot, depth, depths } => {
                push(&mut v, "dot", dot);
                push(&mut v, "depth", depth);
                push(&mut v, "depths", depths);
            }
            Cmd::DepthSweep { dataset, depths, n_train, n_test, reps, reg_eps } => {
                push(&mut v, "dataset", dataset);
                push(&mut v, "depths", depths);
                push(&mut v, "n_train", n_train);
                push(&mut v, "n_test", n_test);
                push(&mut v, "reps", reps);
                push(&mut v, "reg_eps", reg_eps);
            }
            Cmd::Residual { widths, trials } => {
                push(&mut v, "widths", widths);
                push(&mut v, "trials", trials);
            }
            Cmd::Trace { n, trials } => {
                push(&mut v, "width", n);
                push(&mut v, "trials", trials);
            }
            Cmd::Spectrum { n, points } => {
                push(&mut v, "width", n);
                push(&mut v, "spectrum_points", points);
            }
            Cmd::Regress { dataset, kernel, depth, n_train, n_test, reg_eps } => {
                push(&mut v, "dataset", dataset);
                push(&mut v, "kernel", kernel);
                push(&mut v, "depth", depth);
                push(&mut v, "n_train", n_train);
                push(&mut v, "n_test", n_test);
                push(&mut v, "reg_eps", reg_eps);
            }
            Cmd::Cdeq { dataset, images, image_size, filter } => {
                if dataset.is_some() {
                    v.push(("image_source", "dataset".into()));
                }
                push(&mut v, "dataset", dataset);
                push(&mut v, "images", images);
                push(&mut v, "image_size", image_size);
                push(&mut v, "filter", filter);
            }
        }
        v
    }
}

fn build_config(cli: &Cli) -> Result<RunConfig> {
    let c = &cli.common;
    let mut cfg = match &c.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    for kv in &c.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    let globals: [(&str, Option<String>); 7] = [
        ("sigma_w_sq", c.sw2.map(|x| x.to_string())),
        ("sigma_u_sq", c.su2.map(|x| x.to_string())),
        ("sigma_b_sq", c.sb2.map(|x| x.to_string())),
        ("sigma_v_sq", c.sv2.map(|x| x.to_string())),
        ("activation", c.activation.clone()),
        ("seed", c.seed.map(|x| x.to_string())),
        ("output_dir", c.out.as_ref().map(|p| p.display().to_string())),
    ];
    for (k, v) in globals {
        if let Some(v) = v {
            cfg.set(k, &v)?;
        }
    }
    for (k, v) in cli.command.overrides() {
        cfg.set(k, &v)?;
    }
    Ok(cfg)
}

fn out_file(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.output_dir.join(name)
}

fn kernel(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let fixed_point = cfg.depth.is_none();
    let params = if fixed_point { cfg.fixed_point_params()? } else { cfg.params()? };
    match cfg.dot {
        Some(dot) => {
            let theta = match (cfg.depth, cfg.activation) {
                (Some(d), _) => finite_depth_ntk(dot, d, &params)?.output,
                (None, Activation::Linear) => theta_linear_deq(dot, &params)?,
                (None, Activation::NormalizedRelu) => theta_deq(dot, &params)?.theta,
            };
            println!("{theta:.12}");
            let mut t = Table::create(&out_file(cfg, "kernel.csv"), &[], &["dot", "depth", "theta"])?;
            t.row([float(dot), cfg.depth.map_or_else(|| "inf".into(), |d| d.to_string()), float(theta)])?;
            Ok(vec![t.finish()?])
        }
        None => {
            let params = cfg.params()?;
            let rows = theta_vs_dot_sweep(&params, &cfg.depths, cfg.dot_points)?;
            let mut t = Table::create(&out_file(cfg, "theta_vs_dot.csv"), &[], &["dot", "depth", "theta"])?;
            for (dot, d, th) in rows {
                t.row([float(dot), d.to_string(), float(th)])?;
            }
            Ok(vec![t.finish()?])
        }
    }
}

fn load(cfg: &RunConfig, split: Split, default_norm: Normalization) -> Result<Dataset> {
    let dir = cfg.resolve_data_dir()?;
    let norm = cfg.normalization.unwrap_or(default_norm);
    match cfg.dataset.as_str() {
        "mnist" => load_mnist(&dir, split, norm),
        "cifar10" => load_cifar10(&dir, split, norm),
        other => Err(Error::Config(format!("unknown dataset `{other}` (expected mnist or cifar10)"))),
    }
}

fn depth_sweep_cmd(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let train = load(cfg, Split::Train, Normalization::UnitSample)?;
    let test = load(cfg, Split::Test, Normalization::UnitSample)?;
    let (tr_rows, te_rows) = (train.rows(), test.rows());
    let sweep = SweepConfig {
        depths: cfg.depths.clone(),
        n_train: cfg.n_train,
        n_test: cfg.n_test,
        reps: cfg.reps,
        seed: cfg.seed,
        reg_eps: cfg.reg_eps,
        classes: train.classes().max(test.classes()),
        params_deq: cfg.fixed_point_params()?,
        params_vanilla: cfg.vanilla_params()?,
    };
    let rows = depth_sweep(
        LabelledRows { rows: &tr_rows, labels: &train.labels },
        LabelledRows { rows: &te_rows, labels: &test.labels },
        &sweep,
    )?;
    let mut t = Table::create(
        &out_file(cfg, "depth_sweep.csv"),
        &[],
        &["kernel", "depth", "rep", "accuracy", "distinct_predictions"],
    )?;
    for r in &rows {
        t.row([
            r.kernel.to_string(),
            r.depth.to_string(),
            r.rep.to_string(),
            float(r.accuracy),
            r.distinct_predictions.to_string(),
        ])?;
    }
    let mut s = Table::create(
        &out_file(cfg, "depth_sweep_summary.csv"),
        &[],
        &["kernel", "depth", "reps", "mean", "ci_low", "ci_high"],
    )?;
    for r in summarize(&rows) {
        println!(
            "{:<18} depth {:>5}  mean {:.4}  95% CI [{:.4}, {:.4}]",
            r.kernel, r.depth, r.mean, r.ci_low, r.ci_high
        );
        s.row([
            r.kernel.to_string(),
            r.depth.to_string(),
            r.reps.to_string(),
            float(r.mean),
            float(r.ci_low),
            float(r.ci_high),
        ])?;
    }
    Ok(vec![t.finish()?, s.finish()?])
}

fn forward_options(cfg: &RunConfig) -> ForwardOptions {
    ForwardOptions { tol: cfg.forward_tol, max_iter: cfg.max_iter, damping: cfg.damping }
}

/// Input inner product used by `residual` when `dot` is not set.
const RESIDUAL_DOT: f64 = 0.5;

fn residual_cmd(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let params = cfg.fixed_point_params()?;
    let opts = forward_options(cfg);
    let dot = cfg.dot.unwrap_or(RESIDUAL_DOT);
    let mut t = Table::create(
        &out_file(cfg, "residual.csv"),
        &[],
        &["width", "trial", "theta_n", "theta", "relative_residue"],
    )?;
    for &n in &cfg.widths {
        let trials: Vec<_> = (0..cfg.trials)
            .into_par_iter()
            .map(|k| residual_trial(n, cfg.input_dim, dot, &params, cfg.seed, k, &opts))
            .collect::<Result<_>>()?;
        for r in &trials {
            t.row([n.to_string(), r.trial.to_string(), float(r.theta_n), float(r.theta), float(r.relative_residue)])?;
        }
        let med = median(&trials.iter().map(|r| r.relative_residue).collect::<Vec<_>>());
        println!("width {n:>6}  median relative residue {med:.5}");
    }
    Ok(vec![t.finish()?])
}

fn trace_cmd(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    cfg.fixed_point_params()?;
    let trials: Vec<_> = (0..cfg.trials)
        .into_par_iter()
        .map(|k| trace_trial(cfg.width, cfg.sigma_w_sq, cfg.seed, k))
        .collect::<Result<_>>()?;
    let target = 1.0 / (1.0 - cfg.sigma_w_sq);
    let mut t = Table::create(&out_file(cfg, "trace.csv"), &[], &["trial", "trace", "target", "op_norm_estimate"])?;
    for r in &trials {
        t.row([r.trial.to_string(), float(r.trace), float(target), float(r.op_norm)])?;
    }
    let mean = trials.iter().map(|r| r.trace).sum::<f64>() / trials.len() as f64;
    println!("mean (1/n) tr(HᵀH) = {mean:.6}  (limit {target:.6}, {} trials)", trials.len());
    Ok(vec![t.finish()?])
}

fn spectrum_cmd(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    cfg.fixed_point_params()?;
    let s = cfg.sigma_w_sq;
    let eigs = spectrum_trial(cfg.width, s, cfg.seed, 0)?;
    let limit = SpectralDensitySamples::tabulate(s, cfg.spectrum_points)?;
    let (l, u) = limit.support;
    let comment = vec![format!("sigma_w_sq={s:e} lower={} upper={}", float(l), float(u))];
    let mut e = Table::create(&out_file(cfg, "spectrum_empirical.csv"), &comment, &["lambda", "ecdf"])?;
    let n = eigs.len() as f64;
    for (i, &x) in eigs.iter().enumerate() {
        e.row([float(x), float((i + 1) as f64 / n)])?;
    }
    let mut d = Table::create(&out_file(cfg, "spectrum_limit.csv"), &comment, &["lambda", "density"])?;
    for &(x, p) in &limit.grid {
        d.row([float(x), float(p)])?;
    }
    let dist = ecdf_sup_distance(&eigs, &limit);
    println!("support [{l:.6}, {u:.6}]  mass {:.6}  CDF sup-distance {dist:.4}", limit.mass());
    Ok(vec![e.finish()?, d.finish()?])
}

fn regress_cmd(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let train = load(cfg, Split::Train, Normalization::UnitSample)?.head(cfg.n_train);
    let test = load(cfg, Split::Test, Normalization::UnitSample)?.head(cfg.n_test);
    let params = match cfg.kernel {
        deqntk::gram::KernelTag::DeqNtk | deqntk::gram::KernelTag::LinearDeq => cfg.fixed_point_params()?,
        _ => cfg.params()?,
    };
    let pool: Vec<&[f64]> = train.rows().into_iter().chain(test.rows()).collect();
    let gram = assemble_gram(&pool, cfg.kernel, &params, cfg.depth)?;
    let tr: Vec<usize> = (0..train.len()).collect();
    let te: Vec<usize> = (train.len()..pool.len()).collect();
    let classes = train.classes().max(test.classes());
    let r = regress_and_score(
        &gram.block(&tr, &tr),
        &gram.block(&te, &tr),
        &train.labels,
        &test.labels,
        classes,
        cfg.reg_eps,
    )?;
    println!(
        "accuracy {:.4} ({} train, {} test, ridge {:e}, jitter {:e})",
        r.accuracy,
        train.len(),
        test.len(),
        r.ridge,
        r.jitter
    );
    let mut t = Table::create(
        &out_file(cfg, "regress.csv"),
        &[],
        &["kernel", "depth", "n_train", "n_test", "reg_eps", "accuracy"],
    )?;
    t.row([
        cfg.kernel.to_string(),
        cfg.depth.map_or_else(String::new, |d| d.to_string()),
        train.len().to_string(),
        test.len().to_string(),
        float(cfg.reg_eps),
        float(r.accuracy),
    ])?;
    Ok(vec![t.finish()?])
}

fn random_images(count: usize, size: usize, channels: usize, seed: u64) -> Result<Vec<ConvImage>> {
    (0..count)
        .map(|k| {
            let raw = deqntk::rng::normals(seed, k as u32, deqntk::rng::Block::Input, 1, size * size * channels);
            let mut data = raw;
            for px in data.chunks_exact_mut(channels) {
                let norm = px.iter().map(|v| v * v).sum::<f64>().sqrt();
                px.iter_mut().for_each(|v| *v /= norm);
            }
            Ok(ConvImage::new(size, size, channels, data)?)
        })
        .collect()
}

fn cdeq_cmd(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let params = cfg.fixed_point_params()?;
    let images = if cfg.image_source == "dataset" {
        let mut ds =
            load(cfg, Split::Train, Normalization::None)?.head(cfg.images).crop(cfg.image_size, cfg.image_size)?;
        ds.normalize(Normalization::UnitPixel)?;
        (0..ds.len()).map(|i| ds.image(i)).collect::<Result<Vec<_>>>()?
    } else {
        random_images(cfg.images, cfg.image_size, 3, cfg.seed)?
    };
    let config = CdeqConfig { filter: cfg.filter, ..CdeqConfig::default() };
    let gram = assemble_cdeq_gram(&images, &params, &config)?;
    let n = gram.len();
    let mut t = Table::create(&out_file(cfg, "cdeq_gram.csv"), &[], &["i", "j", "theta"])?;
    for i in 0..n {
        for j in 0..n {
            t.row([i.to_string(), j.to_string(), float(gram.values[(i, j)])])?;
        }
    }
    let ev = gram.values.self_adjoint_eigenvalues(Side::Lower).map_err(|e| Error::LinAlg(format!("{e:?}")))?;
    let (lo, hi) = ev.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &e| (a.min(e), b.max(e)));
    println!("{n} images  Gram eigenvalues in [{lo:.6e}, {hi:.6e}]");
    Ok(vec![t.finish()?])
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = build_config(cli)?;
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    let start = Instant::now();
    let outputs = match &cli.command {
        Cmd::Kernel { .. } => kernel(&cfg)?,
        Cmd::DepthSweep { .. } => depth_sweep_cmd(&cfg)?,
        Cmd::Residual { .. } => residual_cmd(&cfg)?,
        Cmd::Trace { .. } => trace_cmd(&cfg)?,
        Cmd::Spectrum { .. } => spectrum_cmd(&cfg)?,
        Cmd::Regress { .. } => regress_cmd(&cfg)?,
        Cmd::Cdeq { .. } => cdeq_cmd(&cfg)?,
    };
    write_manifest(Path::new(&cfg.output_dir), cli.command.name(), &cfg, start.elapsed(), &outputs)?;
    Ok(())
}

fn main() -> ExitCode {
    faer::set_global_parallelism(faer::Par::Seq);
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
