//! Sequential network engine: layers, losses, backpropagation, SGD and the
//! supervised encoder pretraining loop.

mod arch;
mod layer;
mod linalg;
mod loss;
mod network;
mod train;

use thiserror::Error;

pub use arch::{Arch, EMBEDDING_DIM, IMAGE_PIXELS, IMAGE_SIDE};
pub use layer::{LayerSpec, Params};
pub use loss::{cross_entropy, mse, softmax_cross_entropy, squared_error, PROB_FLOOR};
pub use network::{Gradients, Layer, Network, WeightInit};
pub use train::{
    accuracy, argmax, train_classifier, train_encoder, EncoderModel, EpochStats, LrSchedule, TrainConfig,
    TrainReport,
};

pub(crate) use train::INFER_CHUNK;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("layer {layer}: {reason}")]
    InvalidArchitecture { layer: usize, reason: String },
    #[error("layer {layer}: expected sample shape {expected:?}, got {actual:?}")]
    ShapeMismatch {
        layer: usize,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("layer {layer}: parameter shape {actual:?} does not match {expected:?}")]
    ParamShape {
        layer: usize,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("activations do not belong to this network: {reason}")]
    StaleActivations { reason: String },
    #[error("non-finite gradient for layer {layer}; step aborted")]
    NonFiniteGradient { layer: usize },
    #[error("gradient supplied for frozen layer {layer}")]
    GradientForFrozenLayer { layer: usize },
    #[error("no parameterised layer {layer}")]
    UnknownLayer { layer: usize },
    #[error("{rows} rows but {labels} labels")]
    BatchMismatch { rows: usize, labels: usize },
    #[error("label {label} at index {index} is outside 0..{classes}")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        classes: usize,
    },
    #[error("row {row} is not a probability vector (sums to {sum})")]
    NotProbabilities { row: usize, sum: f64 },
    #[error("training diverged at epoch {epoch}, batch {batch}; last good checkpoint: {}", last_good_epoch.map_or("initial weights".to_string(), |e| format!("end of epoch {e}")))]
    Diverged {
        epoch: usize,
        batch: usize,
        last_good_epoch: Option<usize>,
    },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("encoder has not been trained")]
    Untrained,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("invalid features: {0}")]
    Features(String),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
}
