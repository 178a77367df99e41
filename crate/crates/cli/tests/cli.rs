use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use seq_core::data::RawDataset;
use seq_core::pipeline::ModelBundle;
use seq_core::rng::XorShift64Star;

/// Ten classes, two styles each: a bar through row or column `3 + 2c`.
fn write_split(dir: &Path, prefix: &str, n: usize, seed: u64) {
    let mut rng = XorShift64Star::new(seed, 0);
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let c = i % 10;
        let line = 3 + 2 * c;
        for y in 0..28 {
            for x in 0..28 {
                let along = if (i / 10) % 2 == 0 { y } else { x };
                let v = if along == line || along == line + 1 { 200 + rng.below(56) } else { rng.below(30) };
                images.push(v as u8);
            }
        }
        labels.push(c as u8);
    }
    let raw = RawDataset { count: n, rows: 28, cols: 28, images, labels };
    let (i, l) = raw.to_idx();
    i.write(&dir.join(format!("{prefix}-images-idx3-ubyte"))).unwrap();
    l.write(&dir.join(format!("{prefix}-labels-idx1-ubyte"))).unwrap();
}

struct Fixture {
    _tmp: tempfile::TempDir,
    data: PathBuf,
    config: PathBuf,
    root: PathBuf,
}

fn fixture() -> Fixture {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    std::fs::create_dir(&data).unwrap();
    write_split(&data, "train", 300, 1);
    write_split(&data, "t10k", 100, 2);
    let config = tmp.path().join("run.toml");
    std::fs::write(
        &config,
        "seed = 7\nk_grid = [10, 20]\nsteps = 2\n[encoder]\nepochs = 2\n[decoder]\nepochs = 2\n[kmeans]\nk = 20\n",
    )
    .unwrap();
    Fixture {
        root: tmp.path().to_path_buf(),
        _tmp: tmp,
        data,
        config,
    }
}

fn seq(fx: &Fixture, out: &str, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seq"))
        .args(args)
        .arg("--config")
        .arg(&fx.config)
        .arg("--out")
        .arg(fx.root.join(out))
        .env("SEQ_DATA_DIR", &fx.data)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn bundle_sha(stdout: &str) -> String {
    stdout.lines().find_map(|l| l.split("sha256 ").nth(1)).unwrap().trim().to_string()
}

#[test]
fn full_workflow() {
    let fx = fixture();
    let out = fx.root.join("a");
    let enc = ok(&seq(&fx, "a", &["train-encoder"]));
    let p_e: f64 = enc.lines().next().unwrap().strip_prefix("P_E ").unwrap().parse().unwrap();
    assert!(p_e > 0.9, "{enc}");
    let metrics = std::fs::read_to_string(out.join("encoder_metrics.csv")).unwrap();
    assert_eq!(metrics.lines().next(), Some("epoch,train_loss,train_acc,test_acc"));
    assert_eq!(metrics.lines().count(), 3);

    // Generating before quantizing is a precondition failure.
    assert_eq!(seq(&fx, "a", &["generate"]).status.code(), Some(5));
    assert_eq!(seq(&fx, "a", &["eval"]).status.code(), Some(5));

    ok(&seq(&fx, "a", &["quantize"]));
    let sweep = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let mut lines = sweep.lines();
    assert_eq!(lines.next(), Some("k,p_q_train,acc_test,inertia,seed"));
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1][0], "20");
    let p_q_20: f64 = rows[1][1].parse().unwrap();
    // The first resample is the stored codebook's own seed.
    let resamples = std::fs::read_to_string(out.join("resamples.csv")).unwrap();
    assert_eq!(resamples.lines().count(), 6);
    assert_eq!(resamples.lines().nth(1).unwrap(), sweep.lines().nth(2).unwrap());

    // Evaluating the training split reproduces the sweep's P_Q.
    ok(&seq(&fx, "a", &["eval", "--split", "train"]));
    let eval = std::fs::read_to_string(out.join("eval.csv")).unwrap();
    let fields: Vec<&str> = eval.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(fields[0], "train");
    assert!((fields[3].parse::<f64>().unwrap() - p_q_20).abs() < 1e-12);

    let before = ModelBundle::load(&out.join("bundle.seq")).unwrap();
    let dec = ok(&seq(&fx, "a", &["train-decoder"]));
    let after = ModelBundle::load(&out.join("bundle.seq")).unwrap();
    assert_eq!(before.encoder.param_bytes(), after.encoder.param_bytes());
    assert!(dec.contains(&before.encoder.fingerprint()));
    let dm = std::fs::read_to_string(out.join("decoder_metrics.csv")).unwrap();
    assert_eq!(dm.lines().next(), Some("epoch,train_mse,heldout_mse,baseline_mse"));

    let gen = ok(&seq(&fx, "a", &["generate", "--mode", "cluster-means", "--format", "png"]));
    assert!(gen.contains("20 cells"), "{gen}");
    assert!(out.join("cluster_means.png").exists());

    // Pick three training samples from one cluster, then three spanning clusters.
    let bundle = after;
    let cb = bundle.codebook.as_ref().unwrap();
    let train = seq_core::data::load_split(&fx.data, seq_core::data::Split::Train, seq_core::data::Layout::Flat).unwrap();
    let enc = seq_core::nn::EncoderModel::from_trained(bundle.arch, bundle.encoder.clone()).unwrap();
    let fs = enc.encode_dataset(&train).unwrap();
    let clusters = seq_core::quantizer::assign(&fs, cb.centroids()).unwrap();
    let same: Vec<usize> = (0..fs.rows()).filter(|&i| clusters[i] == clusters[0]).take(3).collect();
    assert_eq!(same.len(), 3);
    let ids = format!("{},{},{}", same[0], same[1], same[2]);
    let intra = ok(&seq(&fx, "a", &["generate", "--mode", "intra", "--ids", &ids]));
    assert!(intra.contains("(7 cells, 3 annotated)"), "{intra}");
    let other = (0..fs.rows()).find(|&i| clusters[i] != clusters[0]).unwrap();
    let mixed = format!("{},{},{}", same[0], same[1], other);
    assert_eq!(seq(&fx, "a", &["generate", "--mode", "intra", "--ids", &mixed]).status.code(), Some(5));
    assert_eq!(seq(&fx, "a", &["generate", "--mode", "intra", "--ids", "1,2"]).status.code(), Some(2));
}

#[test]
fn same_seed_same_bundle_and_persistence_round_trip() {
    let fx = fixture();
    let a = bundle_sha(&ok(&seq(&fx, "a", &["train-encoder"])));
    let b = bundle_sha(&ok(&seq(&fx, "b", &["train-encoder"])));
    assert_eq!(a, b);
    let qa = bundle_sha(&ok(&seq(&fx, "a", &["quantize"])));
    let qb = bundle_sha(&ok(&seq(&fx, "b", &["quantize"])));
    assert_eq!(qa, qb);
    let sweep_a = std::fs::read(fx.root.join("a/sweep.csv")).unwrap();
    assert_eq!(sweep_a, std::fs::read(fx.root.join("b/sweep.csv")).unwrap());

    let path = fx.root.join("a/bundle.seq");
    let bytes = std::fs::read(&path).unwrap();
    let copy = fx.root.join("copy.seq");
    ModelBundle::load(&path).unwrap().save(&copy).unwrap();
    assert_eq!(std::fs::read(&copy).unwrap(), bytes);

    let c = bundle_sha(&ok(&seq(&fx, "c", &["train-encoder", "--seed", "8"])));
    assert_ne!(a, c);
}

#[test]
fn exit_codes() {
    let fx = fixture();
    let missing = Command::new(env!("CARGO_BIN_EXE_seq"))
        .args(["train-encoder", "--out"])
        .arg(fx.root.join("x"))
        .env("SEQ_DATA_DIR", fx.root.join("nowhere"))
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(3));

    let bad = fx.root.join("bad.toml");
    std::fs::write(&bad, "k_grid = [20, 10]\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_seq"))
        .args(["quantize", "--config"])
        .arg(&bad)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));

    assert_eq!(seq(&fx, "y", &["quantize", "--epsilon", "1.5"]).status.code(), Some(2));
    // No bundle yet.
    assert_eq!(seq(&fx, "y", &["quantize"]).status.code(), Some(5));

    let k_too_large = fx.root.join("big.toml");
    std::fs::write(&k_too_large, "[encoder]\nepochs = 1\n[kmeans]\nk = 5000\n").unwrap();
    ok(&seq(&fx, "z", &["train-encoder"]));
    let o = Command::new(env!("CARGO_BIN_EXE_seq"))
        .args(["quantize", "--k-grid", "10", "--config"])
        .arg(&k_too_large)
        .arg("--out")
        .arg(fx.root.join("z"))
        .env("SEQ_DATA_DIR", &fx.data)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn select_k_writes_report() {
    let fx = fixture();
    ok(&seq(&fx, "s", &["train-encoder"]));
    let out = ok(&seq(&fx, "s", &["select-k", "--epsilon", "0.5"]));
    assert!(out.contains("selected K=10"), "{out}");
    let csv = std::fs::read_to_string(fx.root.join("s/select_k.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("k,p_q_train,threshold,qualifies,inertia,seed"));
    assert!(ModelBundle::load(&fx.root.join("s/bundle.seq")).unwrap().codebook.is_some());
}
