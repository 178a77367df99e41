mod common;

use seq_core::data::{normalize, Split};
use seq_core::generator::{mean_image, train_decoder, DecoderModel};
use seq_core::nn::{train_encoder, Arch, EncoderModel, TrainConfig};

fn small_encoder() -> (EncoderModel, seq_core::data::LabeledDataset, seq_core::data::LabeledDataset) {
    let train = normalize(&common::synthetic_raw(300, 1), Arch::Lae2.layout(), Split::Train);
    let test = normalize(&common::synthetic_raw(100, 2), Arch::Lae2.layout(), Split::Test);
    let cfg = TrainConfig {
        epochs: 2,
        ..TrainConfig::encoder_default(Arch::Lae2)
    };
    let (enc, report) = train_encoder(&train, &test, Arch::Lae2, &cfg).unwrap();
    assert!(report.test_accuracy.unwrap() > 0.9);
    (enc, train, test)
}

#[test]
fn decoder_training_leaves_encoder_bytes_alone() {
    let (enc, train, test) = small_encoder();
    let before = enc.network.param_bytes();
    let cfg = TrainConfig {
        epochs: 3,
        ..TrainConfig::decoder_default()
    };
    let mut dec = DecoderModel::new(Arch::Lae2, &cfg);
    let init = dec.network.fingerprint();
    let report = train_decoder(&enc, &mut dec, &train, Some(&test), &cfg).unwrap();
    assert_eq!(enc.network.param_bytes(), before);
    assert_ne!(dec.network.fingerprint(), init);
    assert_eq!(report.epochs.len(), 3);
    let mse: Vec<f64> = report.epochs.iter().map(|e| e.train_mse).collect();
    assert!(mse[2] < mse[0], "{mse:?}");
}

#[test]
fn zero_epochs_leave_decoder_unchanged() {
    let (enc, train, _) = small_encoder();
    let cfg = TrainConfig {
        epochs: 0,
        ..TrainConfig::decoder_default()
    };
    let mut dec = DecoderModel::new(Arch::Lae2, &cfg);
    let init = dec.network.clone();
    let report = train_decoder(&enc, &mut dec, &train, None, &cfg).unwrap();
    assert!(report.epochs.is_empty());
    assert_eq!(dec.network, init);
}

#[test]
fn same_seed_same_decoder_and_baseline_is_mean_image() {
    let (enc, train, test) = small_encoder();
    let cfg = TrainConfig {
        epochs: 2,
        ..TrainConfig::decoder_default()
    };
    let run = || {
        let mut dec = DecoderModel::new(Arch::Lae2, &cfg);
        let rep = train_decoder(&enc, &mut dec, &train, Some(&test), &cfg).unwrap();
        (dec.network.fingerprint(), rep)
    };
    let (a, rep) = run();
    assert_eq!(a, run().0);

    // Oracle: per-pixel error of always predicting the training mean image.
    let mean = mean_image(&train);
    let x = test.features().data();
    let expected: f64 =
        x.chunks(784).flat_map(|r| r.iter().zip(&mean).map(|(p, m)| (p - m).powi(2))).sum::<f64>() / x.len() as f64;
    assert!((rep.baseline_mse - expected).abs() < 1e-12);
}

#[test]
fn encoder_and_decoder_arch_must_agree() {
    let (enc, train, _) = small_encoder();
    let cfg = TrainConfig::decoder_default();
    let mut dec = DecoderModel::new(Arch::Lae4, &cfg);
    assert!(train_decoder(&enc, &mut dec, &train, None, &cfg).is_err());
}
