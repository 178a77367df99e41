//! Frozen-encoder decoder training, cluster-mean decoding and convex style
//! mixing, with grid export to PGM/PNG.

mod decoder;
mod export;
mod grid;
mod mix;

use std::path::PathBuf;

pub use decoder::{mean_image, mirror_decoder_spec, train_decoder, DecoderEpoch, DecoderModel, DecoderReport};
pub use export::{
    export_grid, extract_cell, parse_pgm, read_pgm, read_png, render, to_byte, write_pgm, write_png, ImageFormat,
    Raster,
};
pub use grid::{check_sources, cluster_mean_images, interpolation_grid, ClusterCell, ImageGrid, Interpolation, MixMode};
pub use mix::{convex_combine, grid_alphas, StyleMix};

use crate::nn::NnError;
use crate::quantizer::QuantizerError;

#[derive(Debug, thiserror::Error)]
pub enum GeneratorError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Quantizer(#[from] QuantizerError),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("weights {0:?} are not a convex combination")]
    BadAlphas([f64; 3]),
    #[error("{0}")]
    Precondition(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image: {0}")]
    Image(String),
}
