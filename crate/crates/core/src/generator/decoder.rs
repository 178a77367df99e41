use log::info;
use serde::Serialize;

use super::GeneratorError;
use crate::data::LabeledDataset;
use crate::nn::{squared_error, Arch, EncoderModel, LayerSpec, Network, NnError, TrainConfig, EMBEDDING_DIM, IMAGE_PIXELS};
use crate::nn::INFER_CHUNK;
use crate::rng::{stream, XorShift64Star};
use crate::tensor::Tensor;

/// Decoder layers for an encoder architecture, mirroring it in reverse and
/// ending in a sigmoid so pixels land in `[0, 1]`.
pub fn mirror_decoder_spec(arch: Arch) -> Vec<LayerSpec> {
    let dense_stack = |dims: &[usize]| {
        let mut specs = Vec::new();
        for (i, w) in dims.windows(2).enumerate() {
            specs.push(LayerSpec::Dense { inputs: w[0], outputs: w[1] });
            specs.push(if i + 2 == dims.len() { LayerSpec::Sigmoid } else { LayerSpec::Relu });
        }
        specs
    };
    match arch {
        Arch::Lae2 => dense_stack(&[EMBEDDING_DIM, 1024, IMAGE_PIXELS]),
        Arch::Lae4 => dense_stack(&[EMBEDDING_DIM, 256, 512, 1024, IMAGE_PIXELS]),
        Arch::Cae4 => vec![
            LayerSpec::Dense { inputs: EMBEDDING_DIM, outputs: 1024 },
            LayerSpec::Relu,
            LayerSpec::Dense { inputs: 1024, outputs: 64 * 7 * 7 },
            LayerSpec::Relu,
            LayerSpec::Unflatten { channels: 64, height: 7, width: 7 },
            LayerSpec::ConvTranspose2d { in_channels: 64, out_channels: 32, kernel: 5 },
            LayerSpec::Relu,
            LayerSpec::ConvTranspose2d { in_channels: 32, out_channels: 1, kernel: 5 },
            LayerSpec::Sigmoid,
        ],
    }
}

/// Maps 128-wide features back to images shaped like the encoder's input.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderModel {
    pub arch: Arch,
    pub network: Network,
}

impl DecoderModel {
    pub fn new(arch: Arch, cfg: &TrainConfig) -> Self {
        let network = Network::new(vec![EMBEDDING_DIM], mirror_decoder_spec(arch), cfg.weight_init, cfg.seed)
            .expect("mirrored architectures are valid");
        Self { arch, network }
    }

    /// Wraps stored weights, checking they match the mirrored layout.
    pub fn from_network(arch: Arch, network: Network) -> Result<Self, NnError> {
        if network.specs() != mirror_decoder_spec(arch) || network.input_shape() != [EMBEDDING_DIM] {
            return Err(NnError::InvalidArchitecture {
                layer: 0,
                reason: format!("layers do not match the {arch} decoder"),
            });
        }
        Ok(Self { arch, network })
    }

    /// Decodes one feature row into a flat 784-pixel image.
    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>, GeneratorError> {
        if z.len() != EMBEDDING_DIM {
            return Err(GeneratorError::DimMismatch {
                expected: EMBEDDING_DIM,
                actual: z.len(),
            });
        }
        let t = Tensor::new(vec![1, EMBEDDING_DIM], z.to_vec()).map_err(NnError::from)?;
        Ok(self.network.infer(&t, 1)?.into_data())
    }

    /// Decodes a `[N, 128]` batch into `[N, ..image shape]`.
    pub fn decode_batch(&self, z: &Tensor) -> Result<Tensor, GeneratorError> {
        Ok(self.network.infer(z, INFER_CHUNK)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecoderEpoch {
    pub epoch: usize,
    /// Mean per-pixel squared error over the training split.
    pub train_mse: f64,
    pub heldout_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderReport {
    pub epochs: Vec<DecoderEpoch>,
    /// Per-pixel MSE of predicting the training mean image for every
    /// evaluation sample (held-out split if given, else training split).
    pub baseline_mse: f64,
    /// Final per-pixel MSE on the same samples as `baseline_mse`.
    pub final_mse: f64,
}

/// Mean image of a dataset.
pub fn mean_image(ds: &LabeledDataset) -> Vec<f64> {
    let x = ds.features();
    let width = x.sample_len();
    let mut mean = vec![0.0; width];
    for row in x.data().chunks_exact(width) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= ds.len() as f64);
    mean
}

fn pixel_mse(x: &Tensor, x_hat: &Tensor) -> f64 {
    x.data()
        .iter()
        .zip(x_hat.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / x.len() as f64
}

fn baseline(mean: &[f64], x: &Tensor) -> f64 {
    x.data()
        .chunks_exact(mean.len())
        .flat_map(|row| row.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)))
        .sum::<f64>()
        / x.len() as f64
}

/// Trains the decoder to reconstruct `train` from the encoder's features.
/// The encoder is only read: features are computed once up front and no
/// gradient ever reaches it.
pub fn train_decoder(
    enc: &EncoderModel,
    dec: &mut DecoderModel,
    train: &LabeledDataset,
    heldout: Option<&LabeledDataset>,
    cfg: &TrainConfig,
) -> Result<DecoderReport, GeneratorError> {
    cfg.validate().map_err(NnError::Config)?;
    if train.is_empty() {
        return Err(NnError::EmptyDataset.into());
    }
    if dec.arch != enc.arch {
        return Err(GeneratorError::Precondition(format!(
            "decoder mirrors {} but the encoder is {}",
            dec.arch, enc.arch
        )));
    }
    let to_tensor = |ds: &LabeledDataset| -> Result<Tensor, GeneratorError> {
        let fs = enc.encode(ds.features(), None)?;
        Ok(Tensor::new(vec![fs.rows(), fs.dim()], fs.data().to_vec()).map_err(NnError::from)?)
    };
    let z_train = to_tensor(train)?;
    let z_held = heldout.map(to_tensor).transpose()?;
    let x_train = train.features();
    let mean = mean_image(train);
    let (eval_x, eval_z) = match (heldout, &z_held) {
        (Some(h), Some(z)) => (h.features(), z),
        _ => (x_train, &z_train),
    };
    let pixels = x_train.sample_len() as f64;
    let n = train.len();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut last_good_epoch = None;
    let total_steps = cfg.epochs * n.div_ceil(cfg.batch_size);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let order = XorShift64Star::new(cfg.seed, stream::SHUFFLE_BASE.wrapping_add(epoch as u64)).permutation(n);
        let mut loss_sum = 0.0;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let z = z_train.gather(idx);
            let x = x_train.gather(idx);
            let acts = dec.network.forward(&z)?;
            let (loss, grad) = squared_error(&x, acts.last().unwrap())?;
            let diverged = NnError::Diverged {
                epoch,
                batch,
                last_good_epoch,
            };
            if !loss.is_finite() {
                return Err(diverged.into());
            }
            loss_sum += loss * idx.len() as f64;
            let grads = dec.network.backward(&acts, &grad)?;
            let lr = cfg.schedule.rate(cfg.learning_rate, step, total_steps);
            step += 1;
            dec.network.sgd_step(&grads, lr).map_err(|e| match e {
                NnError::NonFiniteGradient { .. } => diverged,
                other => other,
            })?;
        }
        let heldout_mse = match (&z_held, heldout) {
            (Some(z), Some(h)) => Some(pixel_mse(h.features(), &dec.decode_batch(z)?)),
            _ => None,
        };
        let stats = DecoderEpoch {
            epoch,
            train_mse: loss_sum / n as f64 / pixels,
            heldout_mse,
        };
        info!(
            "decoder epoch {epoch}: train mse {:.5} held-out mse {}",
            stats.train_mse,
            heldout_mse.map_or("-".into(), |m| format!("{m:.5}"))
        );
        epochs.push(stats);
        last_good_epoch = Some(epoch);
    }
    let final_mse = pixel_mse(eval_x, &dec.decode_batch(eval_z)?);
    Ok(DecoderReport {
        epochs,
        baseline_mse: baseline(&mean, eval_x),
        final_mse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Arch;

    #[test]
    fn mirrors_have_image_output() {
        for arch in Arch::ALL {
            let dec = DecoderModel::new(arch, &TrainConfig::decoder_default());
            assert_eq!(dec.network.output_shape(), arch.input_shape().as_slice(), "{arch}");
            assert_eq!(dec.network.layers().last().unwrap().spec, LayerSpec::Sigmoid);
        }
        let dense: Vec<(usize, usize)> = mirror_decoder_spec(Arch::Lae4)
            .iter()
            .filter_map(|s| match *s {
                LayerSpec::Dense { inputs, outputs } => Some((inputs, outputs)),
                _ => None,
            })
            .collect();
        assert_eq!(dense, vec![(128, 256), (256, 512), (512, 1024), (1024, 784)]);
    }

    #[test]
    fn decode_is_bounded_and_deterministic() {
        let dec = DecoderModel::new(Arch::Lae2, &TrainConfig::decoder_default());
        let mut rng = XorShift64Star::new(3, 0);
        for _ in 0..20 {
            let z: Vec<f64> = (0..EMBEDDING_DIM).map(|_| (rng.unit() - 0.5) * 20.0).collect();
            let a = dec.decode(&z).unwrap();
            assert_eq!(a, dec.decode(&z).unwrap());
            assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert!(matches!(dec.decode(&[0.0; 3]), Err(GeneratorError::DimMismatch { .. })));
    }
}
