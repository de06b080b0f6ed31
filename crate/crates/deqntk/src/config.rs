//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are
//! rejected. Command-line flags are applied on top with [`RunConfig::set`], so
//! a file and flags compose with flags winning.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use deqntk_core::{Activation, KernelParams};

use crate::data::Normalization;
use crate::error::{Error, Result};
use crate::gram::KernelTag;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub sigma_w_sq: f64,
    pub sigma_u_sq: f64,
    pub sigma_b_sq: f64,
    pub sigma_v_sq: f64,
    pub activation: Activation,
    /// Uninjected kernel used by `depth-sweep`.
    pub vanilla_sigma_w_sq: f64,
    pub vanilla_sigma_b_sq: f64,
    pub kernel: KernelTag,
    pub depth: Option<usize>,
    pub depths: Vec<usize>,
    pub dot: Option<f64>,
    pub dot_points: usize,
    pub width: usize,
    pub widths: Vec<usize>,
    pub input_dim: usize,
    pub trials: u32,
    pub seed: u64,
    pub dataset: String,
    pub data_dir: Option<PathBuf>,
    pub normalization: Option<Normalization>,
    pub n_train: usize,
    pub n_test: usize,
    pub reps: u32,
    pub reg_eps: f64,
    pub forward_tol: f64,
    pub max_iter: usize,
    pub damping: f64,
    pub filter: usize,
    pub image_size: usize,
    pub images: usize,
    /// `random` unit-pixel images or `dataset` crops for the convolutional kernel.
    pub image_source: String,
    pub spectrum_points: usize,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            sigma_w_sq: 0.5,
            sigma_u_sq: 0.5,
            sigma_b_sq: 0.0,
            sigma_v_sq: 1.0,
            activation: Activation::NormalizedRelu,
            vanilla_sigma_w_sq: 0.6,
            vanilla_sigma_b_sq: 0.4,
            kernel: KernelTag::DeqNtk,
            depth: None,
            depths: vec![1, 10, 50, 100, 500],
            dot: None,
            dot_points: 41,
            width: 1000,
            widths: vec![256, 1024, 4096],
            input_dim: 10,
            trials: 10,
            seed: 0,
            dataset: "mnist".into(),
            data_dir: None,
            normalization: None,
            n_train: 1000,
            n_test: 100,
            reps: 5,
            reg_eps: 0.0,
            forward_tol: 1e-10,
            max_iter: 10_000,
            damping: 1.0,
            filter: 3,
            image_size: 8,
            images: 8,
            image_source: "random".into(),
            spectrum_points: 400,
            output_dir: PathBuf::from("out"),
        }
    }
}

/// Every accepted key, in the order [`RunConfig::render`] writes them.
pub const KEYS: &[&str] = &[
    "sigma_w_sq",
    "sigma_u_sq",
    "sigma_b_sq",
    "sigma_v_sq",
    "activation",
    "vanilla_sigma_w_sq",
    "vanilla_sigma_b_sq",
    "kernel",
    "depth",
    "depths",
    "dot",
    "dot_points",
    "width",
    "widths",
    "input_dim",
    "trials",
    "seed",
    "dataset",
    "data_dir",
    "normalization",
    "n_train",
    "n_test",
    "reps",
    "reg_eps",
    "forward_tol",
    "max_iter",
    "damping",
    "filter",
    "image_size",
    "images",
    "image_source",
    "spectrum_points",
    "output_dir",
];

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("{key}: cannot parse `{value}`")))
}

fn list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| num(key, s)).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(String::new, T::to_string)
}

impl RunConfig {
    /// Parse a configuration file on top of the defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) =
                line.split_once('=').ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Set one key from its textual value. An empty value clears optional keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "sigma_w_sq" => self.sigma_w_sq = num(key, value)?,
            "sigma_u_sq" => self.sigma_u_sq = num(key, value)?,
            "sigma_b_sq" => self.sigma_b_sq = num(key, value)?,
            "sigma_v_sq" => self.sigma_v_sq = num(key, value)?,
            "activation" => {
                self.activation = match value {
                    "relu" => Activation::NormalizedRelu,
                    "linear" => Activation::Linear,
                    _ => return Err(Error::Config(format!("activation: expected relu or linear, got `{value}`"))),
                }
            }
            "vanilla_sigma_w_sq" => self.vanilla_sigma_w_sq = num(key, value)?,
            "vanilla_sigma_b_sq" => self.vanilla_sigma_b_sq = num(key, value)?,
            "kernel" => self.kernel = value.parse()?,
            "depth" => self.depth = if value.is_empty() { None } else { Some(num(key, value)?) },
            "depths" => self.depths = list(key, value)?,
            "dot" => self.dot = if value.is_empty() { None } else { Some(num(key, value)?) },
            "dot_points" => self.dot_points = num(key, value)?,
            "width" => self.width = num(key, value)?,
            "widths" => self.widths = list(key, value)?,
            "input_dim" => self.input_dim = num(key, value)?,
            "trials" => self.trials = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "dataset" => self.dataset = value.to_string(),
            "data_dir" => self.data_dir = (!value.is_empty()).then(|| PathBuf::from(value)),
            "normalization" => self.normalization = if value.is_empty() { None } else { Some(value.parse()?) },
            "n_train" => self.n_train = num(key, value)?,
            "n_test" => self.n_test = num(key, value)?,
            "reps" => self.reps = num(key, value)?,
            "reg_eps" => self.reg_eps = num(key, value)?,
            "forward_tol" => self.forward_tol = num(key, value)?,
            "max_iter" => self.max_iter = num(key, value)?,
            "damping" => self.damping = num(key, value)?,
            "filter" => self.filter = num(key, value)?,
            "image_size" => self.image_size = num(key, value)?,
            "images" => self.images = num(key, value)?,
            "image_source" => match value {
                "random" | "dataset" => self.image_source = value.to_string(),
                _ => return Err(Error::Config(format!("image_source: expected random or dataset, got `{value}`"))),
            },
            "spectrum_points" => self.spectrum_points = num(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// The configuration as a file that [`RunConfig::from_file`] reads back unchanged.
    pub fn render(&self) -> String {
        let act = match self.activation {
            Activation::NormalizedRelu => "relu",
            Activation::Linear => "linear",
        };
        let values: Vec<String> = vec![
            format!("{:e}", self.sigma_w_sq),
            format!("{:e}", self.sigma_u_sq),
            format!("{:e}", self.sigma_b_sq),
            format!("{:e}", self.sigma_v_sq),
            act.into(),
            format!("{:e}", self.vanilla_sigma_w_sq),
            format!("{:e}", self.vanilla_sigma_b_sq),
            self.kernel.to_string(),
            opt(&self.depth),
            join(&self.depths),
            self.dot.map_or_else(String::new, |d| format!("{d:e}")),
            self.dot_points.to_string(),
            self.width.to_string(),
            join(&self.widths),
            self.input_dim.to_string(),
            self.trials.to_string(),
            self.seed.to_string(),
            self.dataset.clone(),
            self.data_dir.as_ref().map_or_else(String::new, |p| p.display().to_string()),
            opt(&self.normalization),
            self.n_train.to_string(),
            self.n_test.to_string(),
            self.reps.to_string(),
            format!("{:e}", self.reg_eps),
            format!("{:e}", self.forward_tol),
            self.max_iter.to_string(),
            format!("{:e}", self.damping),
            self.filter.to_string(),
            self.image_size.to_string(),
            self.images.to_string(),
            self.image_source.clone(),
            self.spectrum_points.to_string(),
            self.output_dir.display().to_string(),
        ];
        let mut out = String::new();
        for (k, v) in KEYS.iter().zip(values) {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Kernel parameters of the main network.
    pub fn params(&self) -> Result<KernelParams> {
        Ok(KernelParams::new(self.sigma_w_sq, self.sigma_u_sq, self.sigma_b_sq, self.sigma_v_sq)?
            .with_activation(self.activation))
    }

    /// Parameters for fixed-point kernels: additionally `σ_W² < 1`.
    pub fn fixed_point_params(&self) -> Result<KernelParams> {
        if !(self.sigma_w_sq < 1.0) {
            return Err(Error::Config(format!(
                "sigma_w_sq = {}: fixed-point kernels need sigma_w_sq < 1 so that the covariance map is a contraction",
                self.sigma_w_sq
            )));
        }
        if self.sigma_u_sq + self.sigma_b_sq <= 0.0 {
            return Err(Error::Config(
                "sigma_u_sq + sigma_b_sq must be positive for fixed-point kernels (input injection)".into(),
            ));
        }
        self.params()
    }

    /// Parameters of the uninjected comparison network (`σ_U² = 0`).
    pub fn vanilla_params(&self) -> Result<KernelParams> {
        Ok(KernelParams::new(self.vanilla_sigma_w_sq, 0.0, self.vanilla_sigma_b_sq, self.sigma_v_sq)?
            .with_activation(self.activation))
    }

    /// `data_dir`, falling back to `$DEQNTK_DATA_DIR/<dataset>`.
    pub fn resolve_data_dir(&self) -> Result<PathBuf> {
        self.data_dir
            .clone()
            .or_else(|| crate::data::default_data_dir(&self.dataset))
            .ok_or_else(|| Error::Config(format!("no data directory: set data_dir or {}", crate::data::DATA_DIR_ENV)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("# comment\nsigma_w_sq = 0.125\ndepths = 1, 2,3\ndot = -0.5\nnormalization = unit-pixel\n")
            .unwrap();
        cfg.data_dir = Some(PathBuf::from("/tmp/x"));
        let mut back = RunConfig::default();
        back.apply_text(&cfg.render()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.depths, vec![1, 2, 3]);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let mut cfg = RunConfig::default();
        assert!(cfg.set("sigma_q", "1").is_err());
        assert!(cfg.set("width", "-3").is_err());
        assert!(cfg.apply_text("no equals sign").is_err());
        assert!(cfg.set("activation", "tanh").is_err());
    }

    #[test]
    fn fixed_point_requires_contraction() {
        let mut cfg = RunConfig::default();
        cfg.set("sigma_w_sq", "1.0").unwrap();
        let err = cfg.fixed_point_params().unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("sigma_w_sq < 1"));
    }

    #[test]
    fn every_key_is_settable() {
        let text = RunConfig::default().render();
        assert_eq!(text.lines().count(), KEYS.len());
    }
}
