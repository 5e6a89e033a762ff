//! MNIST ingestion (IDX format), pixel normalization, and the Gaussian
//! background sampler used by the robustness term.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::tensor::{Scalar, Tensor};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Conventional MNIST pixel statistics.
pub const MNIST_MEAN: f64 = 0.1307;
pub const MNIST_STD: f64 = 0.3081;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad IDX magic number: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated IDX file: needed {needed} bytes at byte offset {offset}, file has {len}")]
    Truncated { offset: usize, needed: usize, len: usize },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {label} at index {index} is outside [0, 9]")]
    BadLabel { index: usize, label: u8 },
    #[error("dataset is empty")]
    Empty,
    #[error("background std must be > 0, got {0}")]
    NonPositiveStd(f64),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Images in raw `[0, 1]` pixel space with their digit labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    images: Tensor<f32>,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn new(images: Tensor<f32>, labels: Vec<u8>) -> Result<Self> {
        let n = images.shape()[0];
        if n != labels.len() {
            return Err(DataError::CountMismatch { images: n, labels: labels.len() });
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l > 9) {
            return Err(DataError::BadLabel { index, label });
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor<f32> {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn image_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    /// Image `i` as a `[1, C, H, W]` raw-space tensor.
    pub fn image(&self, i: usize) -> Tensor<f32> {
        self.images.sample(i)
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    /// The first `n` samples (or all of them if `n >= len`).
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        let per: usize = self.image_shape().iter().product();
        let mut shape = self.images.shape().to_vec();
        shape[0] = n;
        Dataset {
            images: Tensor::new(shape, self.images.data()[..n * per].to_vec()).expect("prefix shape"),
            labels: self.labels[..n].to_vec(),
        }
    }

    /// Order-sensitive FNV-1a checksum over raw pixel bytes and labels.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |b: u8| {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        };
        for &v in self.images.data() {
            v.to_le_bytes().into_iter().for_each(&mut eat);
        }
        self.labels.iter().copied().for_each(eat);
        h
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(DataError::Truncated { offset: self.pos, needed: n, len: self.bytes.len() });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32_be(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }
}

fn read_magic(r: &mut Reader<'_>, expected: u32) -> Result<()> {
    let found = r.u32_be()?;
    if found != expected {
        return Err(DataError::BadMagic { expected, found });
    }
    Ok(())
}

/// Parse an IDX3 image file into a `[N, 1, rows, cols]` tensor scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Tensor<f32>> {
    let mut r = Reader { bytes, pos: 0 };
    read_magic(&mut r, IDX_IMAGES_MAGIC)?;
    let n = r.u32_be()? as usize;
    let rows = r.u32_be()? as usize;
    let cols = r.u32_be()? as usize;
    if n == 0 || rows == 0 || cols == 0 {
        return Err(DataError::Empty);
    }
    let raw = r.take(n * rows * cols)?;
    let data = raw.iter().map(|&b| b as f32 / 255.0).collect();
    Ok(Tensor::new([n, 1, rows, cols], data).expect("sized from header"))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut r = Reader { bytes, pos: 0 };
    read_magic(&mut r, IDX_LABELS_MAGIC)?;
    let n = r.u32_be()? as usize;
    Ok(r.take(n)?.to_vec())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })
}

pub fn load_mnist(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images = parse_idx_images(&read(images_path.as_ref())?)?;
    let labels = parse_idx_labels(&read(labels_path.as_ref())?)?;
    Dataset::new(images, labels)
}

/// Standard file names of the four MNIST IDX files inside a directory.
#[derive(Debug, Clone)]
pub struct MnistDir(pub PathBuf);

impl MnistDir {
    pub fn train(&self) -> Result<Dataset> {
        load_mnist(self.0.join("train-images-idx3-ubyte"), self.0.join("train-labels-idx1-ubyte"))
    }

    pub fn test(&self) -> Result<Dataset> {
        load_mnist(self.0.join("t10k-images-idx3-ubyte"), self.0.join("t10k-labels-idx1-ubyte"))
    }
}

pub fn normalize_value(v: f64) -> f64 {
    (v - MNIST_MEAN) / MNIST_STD
}

pub fn denormalize_value(v: f64) -> f64 {
    v * MNIST_STD + MNIST_MEAN
}

/// `(x - 0.1307) / 0.3081` per pixel.
pub fn normalize<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (mean, std) = (T::from_f64(MNIST_MEAN), T::from_f64(MNIST_STD));
    x.map(|v| (v - mean) / std)
}

pub fn denormalize<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (mean, std) = (T::from_f64(MNIST_MEAN), T::from_f64(MNIST_STD));
    x.map(|v| v * std + mean)
}

/// Normalized-space values of raw black (0) and raw white (1).
pub fn normalized_range() -> (f64, f64) {
    (normalize_value(0.0), normalize_value(1.0))
}

/// I.i.d. Gaussian backgrounds in normalized space, clamped to the image of
/// raw `[0, 1]` under [`normalize`].
#[derive(Debug, Clone)]
pub struct BackgroundSampler {
    mean: f64,
    std: f64,
    rng: ChaCha8Rng,
}

impl BackgroundSampler {
    pub fn new(mean: f64, std: f64, seed: u64) -> Result<Self> {
        if !(std > 0.0) {
            return Err(DataError::NonPositiveStd(std));
        }
        Ok(Self { mean, std, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    /// The default background: standard normal in normalized space.
    pub fn standard(seed: u64) -> Self {
        Self::new(0.0, 1.0, seed).expect("std 1 is valid")
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn std(&self) -> f64 {
        self.std
    }

    /// Unclamped draws; used to check the distribution itself.
    pub fn sample_raw(&mut self, n: usize) -> Vec<f64> {
        let normal = Normal::new(self.mean, self.std).expect("validated std");
        (0..n).map(|_| normal.sample(&mut self.rng)).collect()
    }

    pub fn sample<T: Scalar>(&mut self, shape: &[usize]) -> Tensor<T> {
        let (lo, hi) = normalized_range();
        let n = shape.iter().product();
        let data = self.sample_raw(n).into_iter().map(|v| T::from_f64(v.clamp(lo, hi))).collect();
        Tensor::new(shape.to_vec(), data).expect("sized from shape")
    }
}

/// `count` distinct indices from `0..n`, in a seed-determined order.
pub fn sample_indices(n: usize, count: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(count);
    idx
}
