use std::path::Path;

use serde::{Deserialize, Serialize};

use super::idx::{parse_idx, IdxFile};
use super::{DataError, NUM_CLASSES};
use crate::rng::{stream, XorShift64Star};
use crate::tensor::Tensor;

/// Images and labels exactly as stored in a pair of IDX files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawDataset {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub images: Vec<u8>,
    pub labels: Vec<u8>,
}

impl RawDataset {
    pub fn from_idx(images: IdxFile, labels: IdxFile) -> Result<Self, DataError> {
        let IdxFile::Images {
            count,
            rows,
            cols,
            pixels,
        } = images
        else {
            return Err(DataError::WrongKind { expected: "image" });
        };
        let IdxFile::Labels(labels) = labels else {
            return Err(DataError::WrongKind { expected: "label" });
        };
        if count != labels.len() {
            return Err(DataError::CountMismatch {
                images: count,
                labels: labels.len(),
            });
        }
        if let Some((index, &label)) = labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l as usize >= NUM_CLASSES)
        {
            return Err(DataError::LabelOutOfRange {
                index,
                label: label as usize,
                classes: NUM_CLASSES,
            });
        }
        Ok(Self {
            count,
            rows,
            cols,
            images: pixels,
            labels,
        })
    }

    pub fn load(images: &Path, labels: &Path) -> Result<Self, DataError> {
        Self::from_idx(parse_idx(images)?, parse_idx(labels)?)
    }

    pub fn to_idx(&self) -> (IdxFile, IdxFile) {
        (
            IdxFile::Images {
                count: self.count,
                rows: self.rows,
                cols: self.cols,
                pixels: self.images.clone(),
            },
            IdxFile::Labels(self.labels.clone()),
        )
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.images[i * n..(i + 1) * n]
    }
}

/// Tensor layout expected by an encoder family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// `[N, rows·cols]` for dense encoders.
    Flat,
    /// `[N, 1, rows, cols]` for convolutional encoders.
    Chw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Normalised features in `[0, 1]` with aligned labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Tensor,
    labels: Vec<usize>,
    split: Split,
}

impl LabeledDataset {
    pub fn new(features: Tensor, labels: Vec<usize>, split: Split) -> Result<Self, DataError> {
        if features.batch() != labels.len() {
            return Err(DataError::CountMismatch {
                images: features.batch(),
                labels: labels.len(),
            });
        }
        if let Some((index, &value)) = features
            .data()
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(DataError::FeatureRange { index, value });
        }
        Ok(Self {
            features,
            labels,
            split,
        })
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |&m| m + 1)
    }

    pub fn layout(&self) -> Layout {
        if self.features.shape().len() == 4 {
            Layout::Chw
        } else {
            Layout::Flat
        }
    }

    /// Same samples viewed in another layout. Only square single-channel
    /// images can move between layouts.
    pub fn with_layout(self, layout: Layout) -> Result<Self, DataError> {
        if self.layout() == layout {
            return Ok(self);
        }
        let n = self.features.batch();
        let len = self.features.sample_len();
        let shape = match layout {
            Layout::Flat => vec![n, len],
            Layout::Chw => {
                let side = (len as f64).sqrt().round() as usize;
                vec![n, 1, side, side]
            }
        };
        Ok(Self {
            features: self.features.reshape(shape)?,
            ..self
        })
    }

    /// The samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            features: self.features.gather(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            split: self.split,
        }
    }

    /// The first `n` samples (or all of them).
    pub fn head(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            features: self.features.slice_batch(0, n),
            labels: self.labels[..n].to_vec(),
            split: self.split,
        }
    }
}

/// Divides every pixel by 255 and lays the images out for an encoder family.
pub fn normalize(raw: &RawDataset, layout: Layout, split: Split) -> LabeledDataset {
    let data: Vec<f64> = raw.images.iter().map(|&p| p as f64 / 255.0).collect();
    let shape = match layout {
        Layout::Flat => vec![raw.count, raw.rows * raw.cols],
        Layout::Chw => vec![raw.count, 1, raw.rows, raw.cols],
    };
    LabeledDataset {
        features: Tensor::new(shape, data).expect("IDX header already validated the payload size"),
        labels: raw.labels.iter().map(|&l| l as usize).collect(),
        split,
    }
}

/// Mini-batches over one epoch in a seeded random order.
///
/// The order is the Fisher–Yates permutation drawn from
/// `XorShift64Star::new(seed, SHUFFLE_BASE + epoch)`; see [`crate::rng`].
pub fn batches(
    ds: &LabeledDataset,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<Batches<'_>, DataError> {
    if batch_size == 0 {
        return Err(DataError::ZeroBatch);
    }
    if ds.is_empty() {
        return Err(DataError::Empty);
    }
    let order = XorShift64Star::new(seed, stream::SHUFFLE_BASE.wrapping_add(epoch)).permutation(ds.len());
    Ok(Batches {
        ds,
        order,
        pos: 0,
        batch_size,
    })
}

pub struct Batches<'a> {
    ds: &'a LabeledDataset,
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
}

impl Batches<'_> {
    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

impl Iterator for Batches<'_> {
    type Item = (Tensor, Vec<usize>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let idx = &self.order[self.pos..end];
        self.pos = end;
        Some((
            self.ds.features.gather(idx),
            idx.iter().map(|&i| self.ds.labels[i]).collect(),
        ))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.order.len() - self.pos).div_ceil(self.batch_size);
        (left, Some(left))
    }
}

impl ExactSizeIterator for Batches<'_> {}
