//! End-to-end workflow: configuration, model bundles and the commands behind
//! the `seq` binary.

mod bundle;
mod commands;
mod config;

use std::path::{Path, PathBuf};

pub use bundle::{bundle_hash, ModelBundle, FORMAT_VERSION, MAGIC};
pub use commands::{
    cmd_eval, cmd_generate, cmd_quantize, cmd_select_k, cmd_train_decoder, cmd_train_encoder, default_bundle_path,
    load_data, DecoderOutcome, EncoderOutcome, EvalOutcome, GenerateMode, GenerateOutcome, GenerateRequest,
    QuantizeOutcome, SelectOutcome, Spread,
};
pub use config::{DataConfig, Overrides, QuantizerConfig, RunConfig, StageConfig, CONFIG_VERSION, DATA_DIR_ENV};

use crate::data::DataError;
use crate::generator::GeneratorError;
use crate::nn::NnError;
use crate::quantizer::QuantizerError;

/// Errors grouped by the process exit code they map to.
#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

impl PipelineError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 2 config, 3 data or I/O, 4 numeric failure, 5 precondition.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Data(_) | PipelineError::Io { .. } => 3,
            PipelineError::Numeric(_) => 4,
            PipelineError::Precondition(_) => 5,
        }
    }
}

impl From<DataError> for PipelineError {
    fn from(e: DataError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<NnError> for PipelineError {
    fn from(e: NnError) -> Self {
        let msg = e.to_string();
        match e {
            NnError::Diverged { .. } | NnError::NonFiniteGradient { .. } => PipelineError::Numeric(msg),
            NnError::Config(_) => PipelineError::Config(msg),
            NnError::EmptyDataset | NnError::LabelOutOfRange { .. } => PipelineError::Data(msg),
            _ => PipelineError::Precondition(msg),
        }
    }
}

impl From<QuantizerError> for PipelineError {
    fn from(e: QuantizerError) -> Self {
        let msg = e.to_string();
        match e {
            QuantizerError::NonFinite { .. } => PipelineError::Numeric(msg),
            QuantizerError::KTooLarge { .. }
            | QuantizerError::ZeroK
            | QuantizerError::BadGrid(_)
            | QuantizerError::BadEpsilon(_)
            | QuantizerError::Config(_) => PipelineError::Config(msg),
            QuantizerError::MissingLabels | QuantizerError::LabelOutOfRange { .. } | QuantizerError::Empty => {
                PipelineError::Data(msg)
            }
            QuantizerError::DimMismatch { .. }
            | QuantizerError::LengthMismatch { .. }
            | QuantizerError::NoNonEmptyCluster => PipelineError::Precondition(msg),
        }
    }
}

impl From<GeneratorError> for PipelineError {
    fn from(e: GeneratorError) -> Self {
        match e {
            GeneratorError::Nn(e) => e.into(),
            GeneratorError::Quantizer(e) => e.into(),
            GeneratorError::BadAlphas(_) => PipelineError::Config(e.to_string()),
            GeneratorError::Io { path, source } => PipelineError::Io { path, source },
            GeneratorError::Image(m) => PipelineError::Data(m),
            GeneratorError::DimMismatch { .. } | GeneratorError::Precondition(_) => {
                PipelineError::Precondition(e.to_string())
            }
        }
    }
}

impl From<csv::Error> for PipelineError {
    fn from(e: csv::Error) -> Self {
        PipelineError::Data(format!("csv: {e}"))
    }
}
