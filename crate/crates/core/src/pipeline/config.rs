use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::nn::{Arch, LrSchedule, TrainConfig, WeightInit};
use crate::quantizer::{KmeansConfig, KmeansInit, DEFAULT_EPSILON};

pub const CONFIG_VERSION: u32 = 1;
/// Environment variable naming the default dataset directory.
pub const DATA_DIR_ENV: &str = "SEQ_DATA_DIR";

/// Where the IDX files live. Explicit paths win over `dir`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub dir: Option<PathBuf>,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    /// Use only the first `n` training samples.
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
}

/// Optimiser settings; unset fields take the per-stage defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub weight_init: Option<WeightInit>,
    pub schedule: Option<LrSchedule>,
}

impl StageConfig {
    fn resolve(&self, base: TrainConfig, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate.unwrap_or(base.learning_rate),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            epochs: self.epochs.unwrap_or(base.epochs),
            weight_init: self.weight_init.unwrap_or(base.weight_init),
            schedule: self.schedule.unwrap_or(base.schedule),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantizerConfig {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub init: KmeansInit,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    /// Independent seeds (`seed`, `seed + 1`, ...) fitted at `k` to report
    /// the spread of P_Q.
    #[serde(default = "default_resamples")]
    pub resamples: usize,
}

fn default_k() -> usize {
    120
}
fn default_max_iter() -> usize {
    KmeansConfig::new(1).max_iter
}
fn default_tol() -> f64 {
    KmeansConfig::new(1).tol
}
fn default_restarts() -> usize {
    KmeansConfig::new(1).restarts
}
fn default_resamples() -> usize {
    5
}

impl Default for QuantizerConfig {
    fn default() -> Self {
        Self {
            k: default_k(),
            init: KmeansInit::default(),
            max_iter: default_max_iter(),
            tol: default_tol(),
            restarts: default_restarts(),
            resamples: default_resamples(),
        }
    }
}

fn default_version() -> u32 {
    CONFIG_VERSION
}
fn default_arch() -> Arch {
    Arch::Lae2
}
fn default_k_grid() -> Vec<usize> {
    (1..=12).map(|i| i * 10).collect()
}
fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("seq-out")
}
fn default_steps() -> usize {
    8
}

/// Everything a run needs. Serialised as TOML; see the README for the schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_arch")]
    pub arch: Arch,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_k_grid")]
    pub k_grid: Vec<usize>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Interior rows/columns of interpolation grids.
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub encoder: StageConfig,
    #[serde(default)]
    pub decoder: StageConfig,
    #[serde(default)]
    pub kmeans: QuantizerConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config takes every default")
    }
}

/// Command-line values that replace config-file values.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub arch: Option<Arch>,
    pub k: Option<usize>,
    pub k_grid: Option<Vec<usize>>,
    pub epsilon: Option<f64>,
    pub out_dir: Option<PathBuf>,
    pub data_dir: Option<PathBuf>,
    pub steps: Option<usize>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// SHA-256 of the canonical TOML form, ignoring `out_dir` so that the
    /// same experiment written to two places hashes alike.
    pub fn hash(&self) -> [u8; 32] {
        let canonical = RunConfig {
            out_dir: PathBuf::new(),
            ..self.clone()
        };
        Sha256::digest(canonical.to_toml().as_bytes()).into()
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.arch {
            self.arch = v;
        }
        if let Some(v) = o.k {
            self.kmeans.k = v;
        }
        if let Some(v) = &o.k_grid {
            self.k_grid = v.clone();
        }
        if let Some(v) = o.epsilon {
            self.epsilon = v;
        }
        if let Some(v) = &o.out_dir {
            self.out_dir = v.clone();
        }
        if let Some(v) = &o.data_dir {
            self.data.dir = Some(v.clone());
        }
        if let Some(v) = o.steps {
            self.steps = v;
        }
    }

    /// Fills `data.dir` from the environment when neither it nor explicit
    /// paths are set.
    pub fn apply_env(&mut self) {
        if self.data.dir.is_none() {
            if let Some(dir) = std::env::var_os(DATA_DIR_ENV) {
                self.data.dir = Some(PathBuf::from(dir));
            }
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.version != CONFIG_VERSION {
            return bad(format!("unsupported config version {} (expected {CONFIG_VERSION})", self.version));
        }
        if self.k_grid.is_empty() || self.k_grid.windows(2).any(|w| w[0] >= w[1]) || self.k_grid[0] == 0 {
            return bad(format!("k_grid must be non-empty, positive and strictly ascending, got {:?}", self.k_grid));
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return bad(format!("epsilon must lie in [0, 1), got {}", self.epsilon));
        }
        let km = &self.kmeans;
        if km.k == 0 || km.restarts == 0 || km.resamples == 0 || !(km.tol >= 0.0) {
            return bad("kmeans needs k, restarts and resamples ≥ 1 and tol ≥ 0".into());
        }
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        self.encoder_train().validate().map_err(PipelineError::Config)?;
        self.decoder_train().validate().map_err(PipelineError::Config)?;
        Ok(())
    }

    pub fn encoder_train(&self) -> TrainConfig {
        self.encoder.resolve(TrainConfig::encoder_default(self.arch), self.seed)
    }

    pub fn decoder_train(&self) -> TrainConfig {
        self.decoder.resolve(TrainConfig::decoder_default(), self.seed)
    }

    pub fn kmeans_config(&self, k: usize) -> KmeansConfig {
        KmeansConfig {
            k,
            init: self.kmeans.init,
            max_iter: self.kmeans.max_iter,
            tol: self.kmeans.tol,
            seed: self.seed,
            restarts: self.kmeans.restarts,
        }
    }
}
