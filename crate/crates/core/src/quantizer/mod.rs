//! k-means quantization of embedded features into labeled clusters.

mod codebook;
mod features;
mod kmeans;
mod select;

pub use codebook::{clustering_accuracy, label_clusters, ClusterLabels, Codebook};
pub use features::{sq_dist, FeatureSet};
pub use kmeans::{assign, kmeans_fit, lloyd_from, Centroids, KmeansConfig, KmeansFit, KmeansInit};
pub use select::{quantize, select_k, sweep_k, KRecord, QuantizerReport, DEFAULT_EPSILON};

#[derive(Debug, thiserror::Error)]
pub enum QuantizerError {
    #[error("feature set is empty")]
    Empty,
    #[error("expected {expected} values, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("non-finite value in row {row}")]
    NonFinite { row: usize },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("labels are required")]
    MissingLabels,
    #[error("label {label} at index {index} is out of range for {classes} classes")]
    LabelOutOfRange { index: usize, label: usize, classes: usize },
    #[error("K must be at least 1")]
    ZeroK,
    #[error("K={k} exceeds the number of points ({n})")]
    KTooLarge { k: usize, n: usize },
    #[error("K grid must be non-empty and strictly ascending, got {0:?}")]
    BadGrid(Vec<usize>),
    #[error("epsilon must lie in [0, 1), got {0}")]
    BadEpsilon(f64),
    #[error("every cluster is empty")]
    NoNonEmptyCluster,
    #[error("{0}")]
    Config(String),
}
