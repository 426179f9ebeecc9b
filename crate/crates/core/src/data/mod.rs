//! MNIST ingestion, the disjoint canonical/transformed split and seeded
//! batch iteration.

mod idx;
mod rng;

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::nn::Tensor;

pub use idx::{
    load_idx, load_idx_images, load_idx_labels, load_mnist, mnist_images_path, mnist_labels_path, set_open_hook,
    MnistPart, IMAGES_MAGIC, LABELS_MAGIC,
};
pub use rng::{RngStreams, Stream};

/// `(batch, 1, 28, 28)` images with pixels in [0, 1].
pub type ImageBatch = Tensor;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: bad magic number at byte offset {offset}: expected {expected:#010x}, found {found:#010x}", path.display())]
    BadMagic {
        path: PathBuf,
        offset: usize,
        expected: u32,
        found: u32,
    },
    #[error("{}: dimension mismatch at byte offset {offset}: {message}", path.display())]
    DimensionMismatch {
        path: PathBuf,
        offset: usize,
        message: String,
    },
    #[error("{}: truncated at byte offset {offset}, need {expected} bytes", path.display())]
    Truncated {
        path: PathBuf,
        offset: usize,
        expected: usize,
    },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("cannot split an odd number of images ({0})")]
    OddSize(usize),
    #[error("dataset is empty")]
    Empty,
    #[error("batch size must be at least 1")]
    ZeroBatch,
}

/// Images plus optional labels. Unlabelled datasets are what defense
/// training sees.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: ImageBatch,
    labels: Option<Vec<u8>>,
}

impl Dataset {
    pub fn new(images: ImageBatch, labels: Option<Vec<u8>>) -> Result<Self, DataError> {
        if let Some(l) = &labels {
            if l.len() != images.batch() {
                return Err(DataError::CountMismatch {
                    images: images.batch(),
                    labels: l.len(),
                });
            }
        }
        Ok(Self { images, labels })
    }

    pub fn images(&self) -> &ImageBatch {
        &self.images
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.images.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops the labels.
    pub fn unlabelled(&self) -> Dataset {
        Dataset {
            images: self.images.clone(),
            labels: None,
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: self.images.select_rows(indices),
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
        }
    }

    /// The first `n` examples (or all of them).
    pub fn head(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }
}

/// Two disjoint halves of a training set with their original indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPair {
    pub canonical: Dataset,
    pub transformed_base: Dataset,
    pub canonical_indices: Vec<usize>,
    pub transformed_indices: Vec<usize>,
}

/// Splits `d` into two equal halves by a seeded uniform permutation: the
/// first half is canonical, the second the base of the transformed set.
pub fn split_train(d: &Dataset, rng: &RngStreams) -> Result<SplitPair, DataError> {
    let n = d.len();
    if n % 2 != 0 {
        return Err(DataError::OddSize(n));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng.get(Stream::Split));
    let transformed_indices = perm.split_off(n / 2);
    let canonical_indices = perm;
    Ok(SplitPair {
        canonical: d.subset(&canonical_indices),
        transformed_base: d.subset(&transformed_indices),
        canonical_indices,
        transformed_indices,
    })
}

/// One mini-batch with the dataset indices it was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub images: ImageBatch,
    pub labels: Option<Vec<u8>>,
}

/// One epoch over a dataset in shuffled order; the last batch may be short.
pub struct BatchIter<'a> {
    data: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for BatchIter<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let indices = self.order[self.pos..end].to_vec();
        self.pos = end;
        let sub = self.data.subset(&indices);
        Some(Batch {
            indices,
            images: sub.images,
            labels: sub.labels,
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = (self.order.len() - self.pos).div_ceil(self.batch_size);
        (n, Some(n))
    }
}

impl ExactSizeIterator for BatchIter<'_> {}

/// Shuffles the indices with `rng` (advancing it) and returns the epoch.
pub fn batch_iter<'a, R: Rng + ?Sized>(d: &'a Dataset, batch_size: usize, rng: &mut R) -> Result<BatchIter<'a>, DataError> {
    if batch_size == 0 {
        return Err(DataError::ZeroBatch);
    }
    if d.is_empty() {
        return Err(DataError::Empty);
    }
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.shuffle(rng);
    Ok(BatchIter {
        data: d,
        order,
        batch_size,
        pos: 0,
    })
}
