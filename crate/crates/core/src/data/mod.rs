//! Dataset ingestion: IDX files in, normalised tensors and seeded
//! mini-batches out.

mod dataset;
mod idx;

use std::path::PathBuf;

use thiserror::Error;

pub use dataset::{batches, normalize, Batches, LabeledDataset, Layout, RawDataset, Split};
pub use idx::{parse_idx, parse_idx_bytes, IdxFile, IMAGE_MAGIC, LABEL_MAGIC};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad IDX magic 0x{0:08x}")]
    BadMagic(u32),
    #[error("truncated IDX data: need {expected} bytes, have {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("IDX data has {actual} bytes, header describes {expected}")]
    TrailingBytes { expected: usize, actual: usize },
    #[error("IDX dimensions {0:?} overflow the addressable size")]
    DimOverflow(Vec<usize>),
    #[error("expected an IDX {expected} file")]
    WrongKind { expected: &'static str },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {label} at index {index} is outside 0..{classes}")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        classes: usize,
    },
    #[error("feature value {value} at index {index} is outside [0, 1]")]
    FeatureRange { index: usize, value: f64 },
    #[error("dataset is empty")]
    Empty,
    #[error("batch size must be at least 1")]
    ZeroBatch,
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
}

/// Number of classes in MNIST and fashion-MNIST.
pub const NUM_CLASSES: usize = 10;

/// Conventional file names (`train-*` / `t10k-*`), accepting a `.gz` suffix.
pub fn split_files(dir: &std::path::Path, split: Split) -> (PathBuf, PathBuf) {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let pick = |stem: String| {
        let raw = dir.join(&stem);
        let gz = dir.join(format!("{stem}.gz"));
        if !raw.exists() && gz.exists() {
            gz
        } else {
            raw
        }
    };
    (
        pick(format!("{prefix}-images-idx3-ubyte")),
        pick(format!("{prefix}-labels-idx1-ubyte")),
    )
}

/// Loads one split from a directory of conventionally named IDX files.
pub fn load_split(dir: &std::path::Path, split: Split, layout: Layout) -> Result<LabeledDataset, DataError> {
    let (images, labels) = split_files(dir, split);
    let raw = RawDataset::load(&images, &labels)?;
    Ok(normalize(&raw, layout, split))
}
