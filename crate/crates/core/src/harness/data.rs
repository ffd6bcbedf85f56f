//! Datasets: MNIST IDX ingestion and seeded synthetic Gaussians.

use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::{standard_normal_matrix, stream};
use crate::stochasticity::{GaussianSampler, Sampler};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Labelled samples stored sample-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    features: Vec<f64>,
    labels: Vec<u8>,
    classes: usize,
}

impl Dataset {
    pub fn new(dim: usize, features: Vec<f64>, labels: Vec<u8>, classes: usize) -> Result<Self> {
        if dim == 0 || classes == 0 {
            return Err(Error::Validation("dataset needs a positive dimension and class count".into()));
        }
        if features.len() != dim * labels.len() {
            return Err(Error::Validation(format!(
                "{} feature values do not form {} samples of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes) {
            return Err(Error::Validation(format!("label {bad} outside 0..{classes}")));
        }
        Ok(Self {
            dim,
            features,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Gathers the given samples as the columns of a `dim × m` matrix.
    pub fn batch(&self, indices: &[usize]) -> Result<(Matrix, Vec<u8>)> {
        let m = indices.len();
        let mut data = vec![0.0; self.dim * m];
        for (j, &i) in indices.iter().enumerate() {
            for (r, &v) in self.sample(i).iter().enumerate() {
                data[r * m + j] = v;
            }
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((Matrix::new(self.dim, m, data)?, labels))
    }

    /// The first `n` samples.
    pub fn truncated(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            dim: self.dim,
            features: self.features[..n * self.dim].to_vec(),
            labels: self.labels[..n].to_vec(),
            classes: self.classes,
        }
    }

    /// The first `n` samples and the rest.
    pub fn split_at(&self, n: usize) -> (Dataset, Dataset) {
        let n = n.min(self.len());
        let rest = Dataset {
            dim: self.dim,
            features: self.features[n * self.dim..].to_vec(),
            labels: self.labels[n..].to_vec(),
            classes: self.classes,
        };
        (self.truncated(n), rest)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
    file: &'a str,
}

impl Cursor<'_> {
    fn u32(&mut self, what: &str) -> Result<u32> {
        let end = self.offset + 4;
        let b = self.bytes.get(self.offset..end).ok_or_else(|| Error::Parse {
            offset: self.offset as u64,
            message: format!("{}: truncated while reading {what}", self.file),
        })?;
        self.offset = end;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let found = self.u32("magic")?;
        if found != expected {
            return Err(Error::Parse {
                offset: 0,
                message: format!("{}: bad magic 0x{found:08x}, expected 0x{expected:08x}", self.file),
            });
        }
        Ok(())
    }

    fn payload(&mut self, len: usize) -> Result<&[u8]> {
        let available = self.bytes.len() - self.offset;
        if available < len {
            return Err(Error::Parse {
                offset: self.bytes.len() as u64,
                message: format!(
                    "{}: truncated payload, expected {len} bytes from offset {} but found {available}",
                    self.file, self.offset
                ),
            });
        }
        let out = &self.bytes[self.offset..self.offset + len];
        self.offset += len;
        Ok(out)
    }
}

/// Parses an IDX image file: returns `(rows, cols, pixels scaled by 1/255)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    let mut c = Cursor {
        bytes,
        offset: 0,
        file: "images",
    };
    c.magic(IDX_IMAGES_MAGIC)?;
    let count = c.u32("image count")? as usize;
    let rows = c.u32("row count")? as usize;
    let cols = c.u32("column count")? as usize;
    let pixels = c.payload(count * rows * cols)?;
    Ok((rows, cols, pixels.iter().map(|&p| f64::from(p) / 255.0).collect()))
}

/// Parses an IDX label file; labels must lie in `0..=9`.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut c = Cursor {
        bytes,
        offset: 0,
        file: "labels",
    };
    c.magic(IDX_LABELS_MAGIC)?;
    let count = c.u32("label count")? as usize;
    let start = c.offset;
    let labels = c.payload(count)?;
    if let Some(pos) = labels.iter().position(|&l| l > 9) {
        return Err(Error::Parse {
            offset: (start + pos) as u64,
            message: format!("labels: value {} is not a digit", labels[pos]),
        });
    }
    Ok(labels.to_vec())
}

/// Loads an IDX image/label pair, flattening images row-major.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let read = |p: &Path| std::fs::read(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())));
    let (rows, cols, pixels) = parse_idx_images(&read(images_path)?)?;
    let labels = parse_idx_labels(&read(labels_path)?)?;
    let dim = rows * cols;
    let count = pixels.len().checked_div(dim).unwrap_or(0);
    if count != labels.len() {
        return Err(Error::Parse {
            offset: 4,
            message: format!("{count} images but {} labels", labels.len()),
        });
    }
    Dataset::new(dim.max(1), pixels, labels, 10)
}

/// The canonical MNIST file names inside `dir`: `(train images, train
/// labels, test images, test labels)`.
pub fn mnist_paths(dir: &Path) -> [std::path::PathBuf; 4] {
    [
        dir.join("train-images-idx3-ubyte"),
        dir.join("train-labels-idx1-ubyte"),
        dir.join("t10k-images-idx3-ubyte"),
        dir.join("t10k-labels-idx1-ubyte"),
    ]
}

/// Training and test splits from a directory holding the four MNIST files.
pub fn load_mnist(dir: &Path) -> Result<(Dataset, Dataset)> {
    let [tri, trl, tei, tel] = mnist_paths(dir);
    Ok((load_idx(&tri, &trl)?, load_idx(&tei, &tel)?))
}

#[derive(Debug, Clone, PartialEq)]
pub enum CovarianceRecipe {
    Identity,
    /// `A Aᵀ/d + ½ I` with `A` standard normal from the given seed.
    Mixed { seed: u64 },
    Explicit(Matrix),
}

const SYNTH_CHUNK: usize = 4096;
const SYNTH_CLASSES: usize = 10;

/// `n` zero-mean Gaussian samples in `d` dimensions. Labels come from a
/// seeded random linear teacher (`argmax T x` over ten classes) so the data
/// can drive classification runs.
pub fn synth_gaussian(d: usize, n: usize, recipe: &CovarianceRecipe, seed: u64) -> Result<Dataset> {
    let sampler = match recipe {
        CovarianceRecipe::Identity => GaussianSampler::isotropic(d),
        CovarianceRecipe::Mixed { seed } => GaussianSampler::mixed(d, *seed),
        CovarianceRecipe::Explicit(cov) => {
            if cov.rows() != d || !cov.is_square() {
                return Err(Error::Validation(format!(
                    "covariance recipe is {:?}, expected {d}×{d}",
                    cov.shape()
                )));
            }
            GaussianSampler::new(vec![0.0; d], cov.clone())?
        }
    };
    let teacher = standard_normal_matrix(&mut stream(seed, &[0x7eac, d as u64]), SYNTH_CLASSES, d);
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for (chunk, start) in (0..n).step_by(SYNTH_CHUNK).enumerate() {
        let m = SYNTH_CHUNK.min(n - start);
        let x = sampler.sample(&mut stream(seed, &[0xda7a, chunk as u64]), m);
        let scores = &teacher * &x;
        for j in 0..m {
            features.extend(x.column(j));
            let col = scores.column(j);
            let best = (0..SYNTH_CLASSES).fold(0, |b, k| if col[k] > col[b] { k } else { b });
            labels.push(best as u8);
        }
    }
    Dataset::new(d, features, labels, SYNTH_CLASSES)
}
