use log::info;
use serde::{Deserialize, Serialize};

use super::arch::{Arch, EMBEDDING_DIM};
use super::layer::LayerSpec;
use super::loss::softmax_cross_entropy;
use super::network::{Network, WeightInit};
use super::NnError;
use crate::data::{batches, LabeledDataset, NUM_CLASSES};
use crate::quantizer::FeatureSet;
use crate::tensor::Tensor;

/// Inference chunk size; bounds activation memory when encoding whole splits.
pub(crate) const INFER_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    #[serde(default)]
    pub weight_init: WeightInit,
    #[serde(default)]
    pub schedule: LrSchedule,
}

/// How the step size evolves over a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Decays linearly from `learning_rate` at the first step towards zero
    /// after the last one.
    Linear,
}

impl LrSchedule {
    /// Step size for step `t` of `total`.
    pub fn rate(self, base: f64, t: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Linear => base * (1.0 - t as f64 / total.max(1) as f64),
        }
    }
}

impl TrainConfig {
    /// Encoder pretraining defaults for an architecture.
    pub fn encoder_default(arch: Arch) -> Self {
        Self {
            learning_rate: 0.05,
            batch_size: 64,
            epochs: arch.default_epochs(),
            seed: 0,
            weight_init: WeightInit::He,
            schedule: LrSchedule::Linear,
        }
    }

    /// Decoder defaults. The loss is a per-sample squared norm, so the step
    /// size is smaller than for the encoder.
    pub fn decoder_default() -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 64,
            epochs: 10,
            seed: 0,
            weight_init: WeightInit::He,
            schedule: LrSchedule::Constant,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return Err("batch_size must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// Accuracy on the held-out split after the last epoch.
    pub test_accuracy: Option<f64>,
}

/// A trained embedding network (classification head removed).
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    pub arch: Arch,
    pub network: Network,
    trained: bool,
}

impl EncoderModel {
    /// A randomly initialised encoder; [`EncoderModel::encode`] refuses it.
    pub fn untrained(arch: Arch, init: WeightInit, seed: u64) -> Self {
        let network = Network::new(arch.input_shape(), arch.encoder_specs(), init, seed)
            .expect("built-in architectures are valid");
        Self {
            arch,
            network,
            trained: false,
        }
    }

    /// Wraps trained weights, e.g. loaded from a bundle.
    pub fn from_trained(arch: Arch, network: Network) -> Result<Self, NnError> {
        if network.specs() != arch.encoder_specs() || network.input_shape() != arch.input_shape().as_slice() {
            return Err(NnError::InvalidArchitecture {
                layer: 0,
                reason: format!("layers do not match the {arch} encoder"),
            });
        }
        Ok(Self {
            arch,
            network,
            trained: true,
        })
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    /// Embeds every sample of `data` (`N × 128`), carrying labels through.
    pub fn encode(&self, data: &Tensor, labels: Option<&[usize]>) -> Result<FeatureSet, NnError> {
        if !self.trained {
            return Err(NnError::Untrained);
        }
        let z = self.network.infer(data, INFER_CHUNK)?;
        let rows = z.batch();
        FeatureSet::new(z.into_data(), rows, EMBEDDING_DIM, labels.map(<[usize]>::to_vec))
            .map_err(|e| NnError::Features(e.to_string()))
    }

    pub fn encode_dataset(&self, ds: &LabeledDataset) -> Result<FeatureSet, NnError> {
        self.encode(ds.features(), Some(ds.labels()))
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of samples whose arg-max output matches the label.
pub fn accuracy(net: &Network, ds: &LabeledDataset) -> Result<f64, NnError> {
    if ds.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let out = net.infer(ds.features(), INFER_CHUNK)?;
    let width = out.sample_len();
    let hits = out
        .data()
        .chunks_exact(width)
        .zip(ds.labels())
        .filter(|(row, &l)| argmax(row) == l)
        .count();
    Ok(hits as f64 / ds.len() as f64)
}

/// Mini-batch SGD on softmax cross-entropy for a network whose final layer
/// is `Softmax`. The loss is evaluated on the pre-softmax logits in the log
/// domain.
pub fn train_classifier(
    net: &mut Network,
    train: &LabeledDataset,
    test: Option<&LabeledDataset>,
    cfg: &TrainConfig,
) -> Result<TrainReport, NnError> {
    cfg.validate().map_err(NnError::Config)?;
    if train.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    if net.layers().last().map(|l| l.spec) != Some(LayerSpec::Softmax) {
        return Err(NnError::InvalidArchitecture {
            layer: net.len().saturating_sub(1),
            reason: "classifier must end with a softmax layer".into(),
        });
    }
    let logits_at = net.len() - 1;
    let total_steps = cfg.epochs * train.len().div_ceil(cfg.batch_size);
    let mut step = 0;
    let mut report = TrainReport::default();
    let mut last_good_epoch = None;
    for epoch in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        let mut hits = 0usize;
        let iter = batches(train, cfg.batch_size, cfg.seed, epoch as u64).map_err(|_| NnError::EmptyDataset)?;
        for (batch_idx, (x, labels)) in iter.enumerate() {
            let acts = net.forward(&x)?;
            let (loss, grad) = softmax_cross_entropy(&acts[logits_at], &labels)?;
            if !loss.is_finite() {
                return Err(NnError::Diverged {
                    epoch,
                    batch: batch_idx,
                    last_good_epoch,
                });
            }
            let probs = &acts[logits_at + 1];
            let width = probs.sample_len();
            hits += probs
                .data()
                .chunks_exact(width)
                .zip(&labels)
                .filter(|(row, &l)| argmax(row) == l)
                .count();
            loss_sum += loss * labels.len() as f64;
            let grads = net.backward_through(&acts, logits_at, &grad)?;
            let lr = cfg.schedule.rate(cfg.learning_rate, step, total_steps);
            step += 1;
            net.sgd_step(&grads, lr).map_err(|e| match e {
                NnError::NonFiniteGradient { .. } => NnError::Diverged {
                    epoch,
                    batch: batch_idx,
                    last_good_epoch,
                },
                other => other,
            })?;
        }
        let test_accuracy = test.map(|t| accuracy(net, t)).transpose()?;
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: hits as f64 / train.len() as f64,
            test_accuracy,
        };
        info!(
            "epoch {epoch}: loss {:.5} train acc {:.4} test acc {}",
            stats.train_loss,
            stats.train_accuracy,
            test_accuracy.map_or("-".into(), |a| format!("{a:.4}"))
        );
        report.epochs.push(stats);
        last_good_epoch = Some(epoch);
    }
    report.test_accuracy = match report.epochs.last() {
        Some(last) => last.test_accuracy,
        None => test.map(|t| accuracy(net, t)).transpose()?,
    };
    Ok(report)
}

/// Pretrains an encoder with an attached `dense(128→10) + softmax` head,
/// then drops the head. The returned report's `test_accuracy` is the
/// encoder's classification accuracy on `test`.
pub fn train_encoder(
    train: &LabeledDataset,
    test: &LabeledDataset,
    arch: Arch,
    cfg: &TrainConfig,
) -> Result<(EncoderModel, TrainReport), NnError> {
    if train.is_empty() || test.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    if let Some((index, &label)) = train
        .labels()
        .iter()
        .chain(test.labels())
        .enumerate()
        .find(|(_, &l)| l >= NUM_CLASSES)
    {
        return Err(NnError::LabelOutOfRange {
            index,
            label,
            classes: NUM_CLASSES,
        });
    }
    let mut specs = arch.encoder_specs();
    let encoder_len = specs.len();
    specs.push(LayerSpec::Dense {
        inputs: EMBEDDING_DIM,
        outputs: NUM_CLASSES,
    });
    specs.push(LayerSpec::Softmax);
    let mut net = Network::new(arch.input_shape(), specs, cfg.weight_init, cfg.seed)?;
    let report = train_classifier(&mut net, train, Some(test), cfg)?;
    net.truncate(encoder_len);
    Ok((
        EncoderModel {
            arch,
            network: net,
            trained: true,
        },
        report,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_schedule_falls_to_one_step_above_zero() {
        let s = LrSchedule::Linear;
        assert_eq!(s.rate(0.05, 0, 10), 0.05);
        assert!((s.rate(0.05, 9, 10) - 0.005).abs() < 1e-15);
        assert!((0..10).all(|t| s.rate(1.0, t + 1, 10) < s.rate(1.0, t, 10)));
        assert_eq!(LrSchedule::Constant.rate(0.05, 9, 10), 0.05);
    }
}
