//! MNIST IDX and CIFAR-10 binary readers plus unit-norm preprocessing.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use deqntk_core::cdeq::ConvImage;

use crate::error::{Error, Result};

/// Environment variable naming the default data directory.
pub const DATA_DIR_ENV: &str = "DEQNTK_DATA_DIR";

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const CIFAR_SIDE: usize = 32;
const CIFAR_CHANNELS: usize = 3;
const CIFAR_RECORD: usize = 1 + CIFAR_SIDE * CIFAR_SIDE * CIFAR_CHANNELS;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// Every sample has unit `ℓ2` norm.
    UnitSample,
    /// Every pixel's channel vector has unit norm; zero pixels become `(1/√C, …)`.
    UnitPixel,
    None,
}

impl Normalization {
    pub fn as_str(self) -> &'static str {
        match self {
            Normalization::UnitSample => "unit-sample",
            Normalization::UnitPixel => "unit-pixel",
            Normalization::None => "none",
        }
    }
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unit-sample" => Ok(Normalization::UnitSample),
            "unit-pixel" => Ok(Normalization::UnitPixel),
            "none" => Ok(Normalization::None),
            _ => Err(Error::Config(format!("unknown normalization `{s}`"))),
        }
    }
}

/// Which half of a dataset to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Image shape `(rows, cols, channels)`; features are stored row-major in HWC order.
pub type ImageShape = (usize, usize, usize);

#[derive(Debug, Clone)]
pub struct Dataset {
    /// `N × m`, row-major.
    pub features: Vec<f64>,
    pub dim: usize,
    pub image_shape: Option<ImageShape>,
    pub labels: Vec<usize>,
    pub normalization: Normalization,
    pub source: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> Vec<&[f64]> {
        self.features.chunks_exact(self.dim).collect()
    }

    /// Number of classes, taken as `max label + 1`.
    pub fn classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    /// Sample `i` as an image; fails for datasets without an image shape.
    pub fn image(&self, i: usize) -> Result<ConvImage> {
        let (r, c, ch) =
            self.image_shape.ok_or_else(|| Error::Config(format!("{} has no image shape", self.source)))?;
        Ok(ConvImage::new(r, c, ch, self.row(i).to_vec())?)
    }

    /// Samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: indices.iter().flat_map(|&i| self.row(i).iter().copied()).collect(),
            dim: self.dim,
            image_shape: self.image_shape,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            normalization: self.normalization,
            source: self.source.clone(),
        }
    }

    /// First `n` samples (all of them if `n` is larger).
    pub fn head(&self, n: usize) -> Dataset {
        self.subset(&(0..n.min(self.len())).collect::<Vec<_>>())
    }

    /// Crop every image to its top-left `rows × cols` window. Used to build
    /// small images for the convolutional kernel.
    pub fn crop(&self, rows: usize, cols: usize) -> Result<Dataset> {
        let (r, c, ch) =
            self.image_shape.ok_or_else(|| Error::Config(format!("{} has no image shape", self.source)))?;
        if rows > r || cols > c {
            return Err(Error::Config(format!("crop {rows}x{cols} exceeds image {r}x{c}")));
        }
        let features = (0..self.len())
            .flat_map(|n| {
                let img = self.row(n);
                (0..rows).flat_map(move |i| img[i * c * ch..(i * c + cols) * ch].iter().copied())
            })
            .collect();
        Ok(Dataset {
            features,
            dim: rows * cols * ch,
            image_shape: Some((rows, cols, ch)),
            labels: self.labels.clone(),
            normalization: Normalization::None,
            source: format!("{} cropped to {rows}x{cols}", self.source),
        })
    }

    /// Apply `mode` in place. A zero sample under `UnitSample` is an error.
    pub fn normalize(&mut self, mode: Normalization) -> Result<()> {
        match mode {
            Normalization::None => {}
            Normalization::UnitSample => {
                for (n, row) in self.features.chunks_exact_mut(self.dim).enumerate() {
                    let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm == 0.0 {
                        return Err(Error::data(&self.source, format!("sample {n} is zero and cannot be normalized")));
                    }
                    row.iter_mut().for_each(|v| *v /= norm);
                }
            }
            Normalization::UnitPixel => {
                let (_, _, ch) = self.image_shape.ok_or_else(|| {
                    Error::Config(format!("unit-pixel normalization needs images; {} has none", self.source))
                })?;
                let uniform = 1.0 / (ch as f64).sqrt();
                for px in self.features.chunks_exact_mut(ch) {
                    let norm = px.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm == 0.0 {
                        px.iter_mut().for_each(|v| *v = uniform);
                    } else {
                        px.iter_mut().for_each(|v| *v /= norm);
                    }
                }
            }
        }
        self.normalization = mode;
        Ok(())
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::data(path, "truncated header"))
}

/// Read an IDX image/label file pair. Pixels are scaled to `[0, 1]`.
pub fn load_mnist_files(images: &Path, labels: &Path, normalization: Normalization) -> Result<Dataset> {
    let img = read(images)?;
    let lab = read(labels)?;
    let magic = be_u32(&img, 0, images)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::data(images, format!("bad magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}")));
    }
    let magic = be_u32(&lab, 0, labels)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::data(labels, format!("bad magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}")));
    }
    let n = be_u32(&img, 4, images)? as usize;
    let rows = be_u32(&img, 8, images)? as usize;
    let cols = be_u32(&img, 12, images)? as usize;
    let n_labels = be_u32(&lab, 4, labels)? as usize;
    if n != n_labels {
        return Err(Error::data(labels, format!("{n_labels} labels for {n} images")));
    }
    let dim = rows * cols;
    let pixels = img.get(16..16 + n * dim).ok_or_else(|| Error::data(images, "truncated pixel data"))?;
    let label_bytes = lab.get(8..8 + n).ok_or_else(|| Error::data(labels, "truncated label data"))?;
    let mut ds = Dataset {
        features: pixels.iter().map(|&p| f64::from(p) / 255.0).collect(),
        dim,
        image_shape: Some((rows, cols, 1)),
        labels: label_bytes.iter().map(|&l| usize::from(l)).collect(),
        normalization: Normalization::None,
        source: images.display().to_string(),
    };
    ds.normalize(normalization)?;
    Ok(ds)
}

/// Read the standard `{train,t10k}-{images-idx3,labels-idx1}-ubyte` files from `dir`.
pub fn load_mnist(dir: &Path, split: Split, normalization: Normalization) -> Result<Dataset> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    load_mnist_files(
        &dir.join(format!("{prefix}-images-idx3-ubyte")),
        &dir.join(format!("{prefix}-labels-idx1-ubyte")),
        normalization,
    )
}

/// Read CIFAR-10 binary batch files. Records are channel-major on disk and
/// are stored here in HWC order with pixels scaled to `[0, 1]`.
pub fn load_cifar10_files(paths: &[PathBuf], normalization: Normalization) -> Result<Dataset> {
    let dim = CIFAR_SIDE * CIFAR_SIDE * CIFAR_CHANNELS;
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let bytes = read(path)?;
        if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
            return Err(Error::data(path, format!("size {} is not a multiple of {CIFAR_RECORD}", bytes.len())));
        }
        for (k, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
            if rec[0] > 9 {
                return Err(Error::data(path, format!("record {k} has label {}", rec[0])));
            }
            labels.push(usize::from(rec[0]));
            let px = &rec[1..];
            features.extend((0..dim).map(|h| {
                let (pixel, c) = (h / CIFAR_CHANNELS, h % CIFAR_CHANNELS);
                f64::from(px[c * plane + pixel]) / 255.0
            }));
        }
    }
    let source = paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(",");
    let mut ds = Dataset {
        features,
        dim,
        image_shape: Some((CIFAR_SIDE, CIFAR_SIDE, CIFAR_CHANNELS)),
        labels,
        normalization: Normalization::None,
        source,
    };
    ds.normalize(normalization)?;
    Ok(ds)
}

/// Read `data_batch_1..5.bin` or `test_batch.bin` from `dir`.
pub fn load_cifar10(dir: &Path, split: Split, normalization: Normalization) -> Result<Dataset> {
    let paths: Vec<PathBuf> = match split {
        Split::Train => (1..=5).map(|k| dir.join(format!("data_batch_{k}.bin"))).collect(),
        Split::Test => vec![dir.join("test_batch.bin")],
    };
    load_cifar10_files(&paths, normalization)
}

/// `$DEQNTK_DATA_DIR/<name>` if the variable is set.
pub fn default_data_dir(name: &str) -> Option<PathBuf> {
    std::env::var_os(DATA_DIR_ENV).map(|d| PathBuf::from(d).join(name))
}
