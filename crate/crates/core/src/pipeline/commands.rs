use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use serde::Serialize;

use super::bundle::ModelBundle;
use super::config::{RunConfig, DATA_DIR_ENV};
use super::PipelineError;
use crate::data::{normalize, split_files, LabeledDataset, RawDataset, Split, NUM_CLASSES};
use crate::generator::{
    cluster_mean_images, export_grid, interpolation_grid, train_decoder, DecoderModel, DecoderReport, ImageFormat,
    MixMode,
};
use crate::nn::{train_encoder, Arch, EncoderModel, EpochStats};
use crate::quantizer::{clustering_accuracy, quantize, select_k, Codebook, FeatureSet, KRecord, QuantizerReport};

/// `<out_dir>/bundle.seq`.
pub fn default_bundle_path(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.join("bundle.seq")
}

/// Loads and normalises one split in the layout `arch` expects.
pub fn load_data(cfg: &RunConfig, split: Split, arch: Arch) -> Result<LabeledDataset, PipelineError> {
    let d = &cfg.data;
    let (explicit_images, explicit_labels, limit) = match split {
        Split::Train => (&d.train_images, &d.train_labels, d.train_limit),
        Split::Test => (&d.test_images, &d.test_labels, d.test_limit),
    };
    let (images, labels) = match (explicit_images, explicit_labels) {
        (Some(i), Some(l)) => (i.clone(), l.clone()),
        _ => {
            let dir = d.dir.as_ref().ok_or_else(|| {
                PipelineError::Config(format!("no dataset location: set data.dir, --data-dir or {DATA_DIR_ENV}"))
            })?;
            let (i, l) = split_files(dir, split);
            (explicit_images.clone().unwrap_or(i), explicit_labels.clone().unwrap_or(l))
        }
    };
    for p in [&images, &labels] {
        if !p.exists() {
            return Err(PipelineError::Data(format!("missing IDX file {}", p.display())));
        }
    }
    let raw = RawDataset::load(&images, &labels)?;
    let ds = normalize(&raw, arch.layout(), split);
    Ok(match limit {
        Some(n) if n < ds.len() => ds.head(n),
        _ => ds,
    })
}

fn ensure_out_dir(cfg: &RunConfig) -> Result<(), PipelineError> {
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| PipelineError::io(&cfg.out_dir, e))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| PipelineError::io(path, e))
}

fn write_csv_with_header<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<(), PipelineError> {
    if rows.is_empty() {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(header)?;
        return w.flush().map_err(|e| PipelineError::io(path, e));
    }
    write_csv(path, rows)
}

fn encoder_of(bundle: &ModelBundle) -> Result<EncoderModel, PipelineError> {
    Ok(EncoderModel::from_trained(bundle.arch, bundle.encoder.clone())?)
}

fn load_bundle(cfg: &RunConfig, path: &Path) -> Result<ModelBundle, PipelineError> {
    if !path.exists() {
        return Err(PipelineError::Precondition(format!(
            "bundle {} not found; run train-encoder first",
            path.display()
        )));
    }
    let b = ModelBundle::load(path)?;
    if b.arch != cfg.arch {
        warn!("bundle holds a {} encoder; ignoring configured arch {}", b.arch, cfg.arch);
    }
    Ok(b)
}

#[derive(Debug, Clone)]
pub struct EncoderOutcome {
    pub p_e: f64,
    pub epochs: Vec<EpochStats>,
    pub bundle_path: PathBuf,
    pub bundle_hash: String,
}

#[derive(Serialize)]
struct EncoderRow {
    epoch: usize,
    train_loss: f64,
    train_acc: f64,
    test_acc: Option<f64>,
}

/// Pretrains the encoder, writes `encoder_metrics.csv`, the resolved
/// `config.toml` and a fresh bundle.
pub fn cmd_train_encoder(cfg: &RunConfig, bundle_path: &Path) -> Result<EncoderOutcome, PipelineError> {
    cfg.validate()?;
    let train = load_data(cfg, Split::Train, cfg.arch)?;
    let test = load_data(cfg, Split::Test, cfg.arch)?;
    ensure_out_dir(cfg)?;
    info!("training {} encoder on {} samples", cfg.arch, train.len());
    let (model, report) = train_encoder(&train, &test, cfg.arch, &cfg.encoder_train())?;
    let p_e = report.test_accuracy.expect("test split is always evaluated");
    let rows: Vec<EncoderRow> = report
        .epochs
        .iter()
        .map(|e| EncoderRow {
            epoch: e.epoch,
            train_loss: e.train_loss,
            train_acc: e.train_accuracy,
            test_acc: e.test_accuracy,
        })
        .collect();
    write_csv_with_header(
        &cfg.out_dir.join("encoder_metrics.csv"),
        &["epoch", "train_loss", "train_acc", "test_acc"],
        &rows,
    )?;
    let cfg_path = cfg.out_dir.join("config.toml");
    std::fs::write(&cfg_path, cfg.to_toml()).map_err(|e| PipelineError::io(&cfg_path, e))?;
    let bundle = ModelBundle {
        arch: cfg.arch,
        seed: cfg.seed,
        config_hash: cfg.hash(),
        p_e,
        encoder: model.network,
        decoder: None,
        codebook: None,
    };
    let bundle_hash = bundle.save(bundle_path)?;
    Ok(EncoderOutcome {
        p_e,
        epochs: report.epochs,
        bundle_path: bundle_path.to_path_buf(),
        bundle_hash,
    })
}

#[derive(Debug, Clone)]
pub struct QuantizeOutcome {
    pub records: Vec<KRecord>,
    pub k: usize,
    pub p_q_train: f64,
    pub acc_test: f64,
    pub p_e: f64,
    /// Accuracy at `k` over `kmeans.resamples` seeds.
    pub spread: Spread,
    pub bundle_hash: String,
}

/// Mean and standard error of P_Q over independently seeded fits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spread {
    pub seeds: usize,
    pub p_q_train_mean: f64,
    pub p_q_train_se: f64,
    pub acc_test_mean: f64,
    pub acc_test_se: f64,
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn log_label_coverage(cb: &Codebook) {
    let claimed: BTreeSet<usize> = cb.cluster_labels().iter().copied().collect();
    info!("K={}: {} of {} labels claim at least one cluster", cb.k(), claimed.len(), cb.num_classes());
}

/// Sweeps `k_grid` (writing `sweep.csv`), refits `kmeans.k` under further
/// seeds (writing `resamples.csv`) and stores the codebook for `kmeans.k`
/// from the base seed in the bundle.
pub fn cmd_quantize(cfg: &RunConfig, bundle_path: &Path) -> Result<QuantizeOutcome, PipelineError> {
    cfg.validate()?;
    let mut bundle = load_bundle(cfg, bundle_path)?;
    let enc = encoder_of(&bundle)?;
    let train = enc.encode_dataset(&load_data(cfg, Split::Train, bundle.arch)?)?;
    let test = enc.encode_dataset(&load_data(cfg, Split::Test, bundle.arch)?)?;
    ensure_out_dir(cfg)?;
    let mut ks = cfg.k_grid.clone();
    if !ks.contains(&cfg.kmeans.k) {
        ks.push(cfg.kmeans.k);
    }
    let mut records = Vec::new();
    let mut chosen = None;
    for &k in &ks {
        let kcfg = cfg.kmeans_config(k);
        let (cb, fit) = quantize(&train, &kcfg, NUM_CLASSES)?;
        let rec = KRecord {
            k,
            p_q_train: clustering_accuracy(&cb, &train)?,
            acc_test: Some(clustering_accuracy(&cb, &test)?),
            inertia: fit.inertia,
            seed: kcfg.seed,
        };
        info!("K={k}: P_Q train {:.4} test {:.4}", rec.p_q_train, rec.acc_test.unwrap());
        if rec.acc_test.unwrap() > bundle.p_e {
            warn!("K={k}: quantizer test accuracy exceeds encoder accuracy {:.4}", bundle.p_e);
        }
        if k == NUM_CLASSES {
            log_label_coverage(&cb);
        }
        if k == cfg.kmeans.k {
            chosen = Some((cb, rec.clone()));
        }
        if cfg.k_grid.contains(&k) {
            records.push(rec);
        }
    }
    write_csv(&cfg.out_dir.join("sweep.csv"), &records)?;
    let (cb, rec) = chosen.expect("configured K is always fitted");

    let mut resamples = vec![rec.clone()];
    for r in 1..cfg.kmeans.resamples as u64 {
        let kcfg = cfg.kmeans_config(rec.k).with_seed(cfg.seed.wrapping_add(r));
        let (other, fit) = quantize(&train, &kcfg, NUM_CLASSES)?;
        resamples.push(KRecord {
            k: rec.k,
            p_q_train: clustering_accuracy(&other, &train)?,
            acc_test: Some(clustering_accuracy(&other, &test)?),
            inertia: fit.inertia,
            seed: kcfg.seed,
        });
    }
    write_csv(&cfg.out_dir.join("resamples.csv"), &resamples)?;
    let train_acc: Vec<f64> = resamples.iter().map(|r| r.p_q_train).collect();
    let test_acc: Vec<f64> = resamples.iter().filter_map(|r| r.acc_test).collect();
    let (p_q_train_mean, p_q_train_se) = mean_and_se(&train_acc);
    let (acc_test_mean, acc_test_se) = mean_and_se(&test_acc);
    let spread = Spread {
        seeds: resamples.len(),
        p_q_train_mean,
        p_q_train_se,
        acc_test_mean,
        acc_test_se,
    };
    info!(
        "K={} over {} seeds: P_Q train {:.4} ({:.4}) test {:.4} ({:.4})",
        rec.k, spread.seeds, p_q_train_mean, p_q_train_se, acc_test_mean, acc_test_se
    );

    bundle.codebook = Some(cb);
    let bundle_hash = bundle.save(bundle_path)?;
    Ok(QuantizeOutcome {
        records,
        k: rec.k,
        p_q_train: rec.p_q_train,
        acc_test: rec.acc_test.unwrap(),
        p_e: bundle.p_e,
        spread,
        bundle_hash,
    })
}

#[derive(Debug, Clone)]
pub struct SelectOutcome {
    pub report: QuantizerReport,
    pub bundle_hash: String,
}

#[derive(Serialize)]
struct SelectRow {
    k: usize,
    p_q_train: f64,
    threshold: f64,
    qualifies: bool,
    inertia: f64,
    seed: u64,
}

/// Applies the K-selection rule with the bundle's encoder accuracy, writes
/// `select_k.csv`, and stores the selected codebook when one qualifies.
pub fn cmd_select_k(cfg: &RunConfig, bundle_path: &Path) -> Result<SelectOutcome, PipelineError> {
    cfg.validate()?;
    let mut bundle = load_bundle(cfg, bundle_path)?;
    let enc = encoder_of(&bundle)?;
    let train = enc.encode_dataset(&load_data(cfg, Split::Train, bundle.arch)?)?;
    ensure_out_dir(cfg)?;
    let (report, cb) = select_k(&train, bundle.p_e, cfg.epsilon, &cfg.k_grid, &cfg.kmeans_config(1), NUM_CLASSES)?;
    let threshold = report.p_e - report.epsilon;
    let rows: Vec<SelectRow> = report
        .records
        .iter()
        .map(|r| SelectRow {
            k: r.k,
            p_q_train: r.p_q_train,
            threshold,
            qualifies: r.p_q_train > threshold,
            inertia: r.inertia,
            seed: r.seed,
        })
        .collect();
    write_csv(&cfg.out_dir.join("select_k.csv"), &rows)?;
    if let Some(cb) = cb {
        bundle.codebook = Some(cb);
    }
    let bundle_hash = bundle.save(bundle_path)?;
    Ok(SelectOutcome { report, bundle_hash })
}

#[derive(Debug, Clone)]
pub struct DecoderOutcome {
    pub report: DecoderReport,
    pub encoder_fingerprint: String,
    pub decoder_fingerprint: String,
    pub bundle_hash: String,
}

#[derive(Serialize)]
struct DecoderRow {
    epoch: usize,
    train_mse: f64,
    heldout_mse: Option<f64>,
    baseline_mse: f64,
}

/// Trains the decoder against the bundle's frozen encoder and writes
/// `decoder_metrics.csv`.
pub fn cmd_train_decoder(cfg: &RunConfig, bundle_path: &Path) -> Result<DecoderOutcome, PipelineError> {
    cfg.validate()?;
    let mut bundle = load_bundle(cfg, bundle_path)?;
    let mut enc = encoder_of(&bundle)?;
    enc.network.set_frozen(true);
    let before = enc.network.fingerprint();
    let train = load_data(cfg, Split::Train, bundle.arch)?;
    let test = load_data(cfg, Split::Test, bundle.arch)?;
    ensure_out_dir(cfg)?;
    let tcfg = cfg.decoder_train();
    let mut dec = DecoderModel::new(bundle.arch, &tcfg);
    let report = train_decoder(&enc, &mut dec, &train, Some(&test), &tcfg)?;
    let after = enc.network.fingerprint();
    if before != after || bundle.encoder.fingerprint() != after {
        return Err(PipelineError::Numeric("encoder parameters changed during decoder training".into()));
    }
    let rows: Vec<DecoderRow> = report
        .epochs
        .iter()
        .map(|e| DecoderRow {
            epoch: e.epoch,
            train_mse: e.train_mse,
            heldout_mse: e.heldout_mse,
            baseline_mse: report.baseline_mse,
        })
        .collect();
    write_csv_with_header(
        &cfg.out_dir.join("decoder_metrics.csv"),
        &["epoch", "train_mse", "heldout_mse", "baseline_mse"],
        &rows,
    )?;
    let decoder_fingerprint = dec.network.fingerprint();
    bundle.decoder = Some(dec.network);
    let bundle_hash = bundle.save(bundle_path)?;
    Ok(DecoderOutcome {
        report,
        encoder_fingerprint: after,
        decoder_fingerprint,
        bundle_hash,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenerateMode {
    ClusterMeans,
    Intra,
    Inter,
}

impl FromStr for GenerateMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cluster-means" | "means" => Ok(GenerateMode::ClusterMeans),
            "intra" | "intra-cluster" => Ok(GenerateMode::Intra),
            "inter" | "inter-cluster" => Ok(GenerateMode::Inter),
            _ => Err(format!("unknown mode `{s}` (expected cluster-means, intra or inter)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GenerateRequest {
    pub mode: GenerateMode,
    /// Sample indices into `split` (three for intra/inter).
    pub ids: Vec<usize>,
    pub split: Split,
    pub format: ImageFormat,
}

#[derive(Debug, Clone)]
pub struct GenerateOutcome {
    pub path: PathBuf,
    pub cells: usize,
    pub annotated: usize,
}

#[derive(Serialize)]
struct ClusterRow {
    cell: usize,
    cluster: usize,
    label: usize,
    members: usize,
    centroid_gap: f64,
}

fn split_name(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Test => "test",
    }
}

/// Decodes cluster means or a three-sample interpolation grid to an image.
pub fn cmd_generate(cfg: &RunConfig, bundle_path: &Path, req: &GenerateRequest) -> Result<GenerateOutcome, PipelineError> {
    cfg.validate()?;
    let bundle = load_bundle(cfg, bundle_path)?;
    let cb = bundle
        .codebook
        .as_ref()
        .ok_or_else(|| PipelineError::Precondition("bundle has no codebook; run quantize first".into()))?;
    let dec_net = bundle
        .decoder
        .clone()
        .ok_or_else(|| PipelineError::Precondition("bundle has no decoder; run train-decoder first".into()))?;
    let dec = DecoderModel::from_network(bundle.arch, dec_net)?;
    let ids: Option<[usize; 3]> = match req.mode {
        GenerateMode::ClusterMeans => None,
        _ => Some(req.ids.as_slice().try_into().map_err(|_| {
            PipelineError::Config(format!("intra/inter modes need exactly 3 sample ids, got {}", req.ids.len()))
        })?),
    };
    let enc = encoder_of(&bundle)?;
    let fs: FeatureSet = enc.encode_dataset(&load_data(cfg, req.split, bundle.arch)?)?;
    ensure_out_dir(cfg)?;
    let ext = req.format.extension();
    let (grid, path) = match (req.mode, ids) {
        (GenerateMode::ClusterMeans, _) => {
            let (grid, cells) = cluster_mean_images(cb, &fs, &dec)?;
            let rows: Vec<ClusterRow> = cells
                .iter()
                .enumerate()
                .map(|(i, c)| ClusterRow {
                    cell: i,
                    cluster: c.cluster,
                    label: c.label,
                    members: c.members,
                    centroid_gap: c.centroid_gap,
                })
                .collect();
            write_csv(&cfg.out_dir.join("cluster_means.csv"), &rows)?;
            (grid, cfg.out_dir.join(format!("cluster_means.{ext}")))
        }
        (mode, Some(ids)) => {
            let (mix, name) = match mode {
                GenerateMode::Intra => (MixMode::IntraCluster, "intra"),
                _ => (MixMode::InterCluster, "inter"),
            };
            let out = interpolation_grid(mix, cb, &fs, &dec, ids, cfg.steps)?;
            let file = format!("{name}_{}_{}_{}_{}.{ext}", split_name(req.split), ids[0], ids[1], ids[2]);
            (out.grid, cfg.out_dir.join(file))
        }
        _ => unreachable!("ids are parsed for every mixing mode"),
    };
    export_grid(&grid, &path, req.format)?;
    Ok(GenerateOutcome {
        path,
        cells: grid.filled(),
        annotated: grid.annotated_count(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalOutcome {
    pub split: String,
    pub k: usize,
    pub samples: usize,
    /// Nearest-centroid accuracy of the codebook on the split.
    pub accuracy: f64,
    /// Encoder accuracy stored in the bundle.
    pub p_e: f64,
}

/// Nearest-centroid accuracy of the bundle's codebook on one split; appends
/// nothing to the bundle and writes `eval.csv`.
pub fn cmd_eval(cfg: &RunConfig, bundle_path: &Path, split: Split) -> Result<EvalOutcome, PipelineError> {
    cfg.validate()?;
    let bundle = load_bundle(cfg, bundle_path)?;
    let cb = bundle
        .codebook
        .as_ref()
        .ok_or_else(|| PipelineError::Precondition("bundle has no codebook; run quantize first".into()))?;
    let enc = encoder_of(&bundle)?;
    let fs = enc.encode_dataset(&load_data(cfg, split, bundle.arch)?)?;
    let out = EvalOutcome {
        split: split_name(split).into(),
        k: cb.k(),
        samples: fs.rows(),
        accuracy: clustering_accuracy(cb, &fs)?,
        p_e: bundle.p_e,
    };
    ensure_out_dir(cfg)?;
    write_csv(&cfg.out_dir.join("eval.csv"), std::slice::from_ref(&out))?;
    Ok(out)
}
