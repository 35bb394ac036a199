//! Dataset ingestion from IDX files and seeded batch iteration.

mod idx;
pub mod synthetic;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, IdxError, Result};
use crate::rng;
use crate::tensor::Tensor;

pub use idx::{read_idx_images, read_idx_labels, write_idx_images, write_idx_labels, IdxImages, IMAGE_MAGIC, LABEL_MAGIC};

pub const IMAGE_SIDE: usize = 28;
pub const PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const CLASSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Mnist,
    Fashion,
}

impl Source {
    /// Subdirectory of the data directory holding this source's files.
    pub fn dir_name(self) -> &'static str {
        match self {
            Source::Mnist => "mnist",
            Source::Fashion => "fashion",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mnist" => Ok(Source::Mnist),
            "fashion" | "fashion-mnist" | "fashion_mnist" | "fashionmnist" => Ok(Source::Fashion),
            _ => Err(Error::Config(format!("unknown dataset {s:?} (expected mnist or fashion)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    /// File name prefix used by the published distribution.
    pub fn file_prefix(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "t10k",
        }
    }
}

/// Scales raw bytes to `[0, 1]`.
pub fn normalize(raw: &[u8]) -> Vec<f32> {
    raw.iter().map(|&b| b as f32 / 255.0).collect()
}

/// Images in `[0, 1]` with their labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// `N x 1 x 28 x 28`.
    pub images: Tensor<f32>,
    pub labels: Vec<u8>,
    pub split: Split,
    pub source: Source,
}

impl Dataset {
    pub fn from_raw(pixels: &[u8], labels: Vec<u8>, split: Split, source: Source) -> Result<Self> {
        if pixels.len() != labels.len() * PIXELS {
            return Err(Error::Input(format!(
                "{} pixels for {} labels",
                pixels.len(),
                labels.len()
            )));
        }
        let images = Tensor::new([labels.len(), 1, IMAGE_SIDE, IMAGE_SIDE], normalize(pixels))?;
        Ok(Self {
            images,
            labels,
            split,
            source,
        })
    }

    /// Reads `<data_dir>/<source>/<prefix>-{images-idx3,labels-idx1}-ubyte[.gz]`.
    pub fn load(data_dir: &Path, source: Source, split: Split) -> Result<Self> {
        let dir = data_dir.join(source.dir_name());
        let images_path = find_file(&dir, &format!("{}-images-idx3-ubyte", split.file_prefix()))?;
        let labels_path = find_file(&dir, &format!("{}-labels-idx1-ubyte", split.file_prefix()))?;
        let images = read_idx_images(&images_path)?;
        let labels = read_idx_labels(&labels_path)?;
        if images.count != labels.len() {
            return Err(IdxError::DimMismatch {
                path: labels_path,
                detail: format!("{} labels for {} images", labels.len(), images.count),
            }
            .into());
        }
        Self::from_raw(&images.pixels, labels, split, source)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Keeps the first `n` samples.
    pub fn truncate(mut self, n: usize) -> Self {
        if n < self.len() {
            self.images = self.images.slice_outer(0, n);
            self.labels.truncate(n);
        }
        self
    }

    /// One image as a `1 x 1 x 28 x 28` batch.
    pub fn image(&self, index: usize) -> Tensor<f32> {
        self.images.slice_outer(index, 1)
    }

    pub fn gather(&self, indices: &[usize]) -> (Tensor<f32>, Vec<usize>) {
        let x = self.images.select_outer(indices);
        let y = indices.iter().map(|&i| self.labels[i] as usize).collect();
        (x, y)
    }

    /// Contiguous chunks in index order; the fixed partition used by every
    /// evaluation pass.
    pub fn chunks(&self, size: usize) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        let n = self.len();
        (0..n.div_ceil(size.max(1))).map(move |i| i * size..((i + 1) * size).min(n))
    }

    pub fn class_counts(&self) -> [usize; CLASSES] {
        let mut counts = [0; CLASSES];
        for &y in &self.labels {
            counts[y as usize] += 1;
        }
        counts
    }
}

fn find_file(dir: &Path, stem: &str) -> Result<PathBuf> {
    for candidate in [dir.join(stem), dir.join(format!("{stem}.gz"))] {
        if candidate.is_file() {
            return Ok(candidate);
        }
    }
    Err(IdxError::Io {
        path: dir.join(stem),
        source: std::io::Error::new(std::io::ErrorKind::NotFound, "neither raw nor .gz file found"),
    }
    .into())
}

/// Sample order for one epoch: a pure function of `(seed, epoch)`.
pub fn permutation(len: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng::stream(seed, rng::SHUFFLE_BASE + epoch));
    order
}

/// Shuffled mini-batches for one epoch; the last batch may be short.
pub struct BatchIterator<'a> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl<'a> BatchIterator<'a> {
    pub fn new(dataset: &'a Dataset, batch_size: usize, seed: u64, epoch: u64) -> Self {
        Self {
            dataset,
            order: permutation(dataset.len(), seed, epoch),
            batch_size: batch_size.max(1),
            pos: 0,
        }
    }
}

impl Iterator for BatchIterator<'_> {
    type Item = (Tensor<f32>, Vec<usize>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.dataset.gather(&self.order[self.pos..end]);
        self.pos = end;
        Some(batch)
    }
}

pub fn batches(dataset: &Dataset, batch_size: usize, seed: u64, epoch: u64) -> BatchIterator<'_> {
    BatchIterator::new(dataset, batch_size, seed, epoch)
}
