//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use seq_core::nn::{LayerSpec, Network, WeightInit};
use seq_core::quantizer::FeatureSet;
use seq_core::rng::XorShift64Star;
use seq_core::tensor::Tensor;

/// Directory with the MNIST IDX files: `$SEQ_DATA_DIR` if set, else
/// `<workspace>/data/mnist`.
pub fn mnist_dir() -> Option<PathBuf> {
    data_dir("mnist")
}

pub fn fashion_dir() -> Option<PathBuf> {
    data_dir("fashion")
}

fn data_dir(name: &str) -> Option<PathBuf> {
    let root = std::env::var_os("SEQ_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"));
    [root.join(name), root]
        .into_iter()
        .find(|d| d.join("train-images-idx3-ubyte").exists() || d.join("train-images-idx3-ubyte.gz").exists())
        .filter(|d| name == "mnist" || d.ends_with(name))
}

/// Squared-Euclidean inertia of the best K-partition, by enumerating every
/// assignment of points to labels (clusters may not be empty).
pub fn brute_force_inertia(points: &[Vec<f64>], k: usize) -> f64 {
    let n = points.len();
    let dim = points[0].len();
    let mut labels = vec![0usize; n];
    let mut best = f64::INFINITY;
    loop {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for d in 0..dim {
                sums[l][d] += p[d];
            }
        }
        if counts.iter().all(|&c| c > 0) {
            let mut sse = 0.0;
            for (p, &l) in points.iter().zip(&labels) {
                for d in 0..dim {
                    let m = sums[l][d] / counts[l] as f64;
                    sse += (p[d] - m) * (p[d] - m);
                }
            }
            best = best.min(sse);
        }
        let mut i = 0;
        loop {
            if i == n {
                return best;
            }
            labels[i] += 1;
            if labels[i] < k {
                break;
            }
            labels[i] = 0;
            i += 1;
        }
    }
}

/// Index of the nearest row by a plain scan (first one on ties).
pub fn brute_nearest(rows: &[Vec<f64>], x: &[f64]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, r) in rows.iter().enumerate() {
        let d: f64 = r.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

/// `classes` Gaussian blobs in `dim` dimensions, `per_class` points each,
/// centres `spread` apart on the coordinate axes.
pub fn blobs(classes: usize, per_class: usize, dim: usize, spread: f64, noise: f64, seed: u64) -> FeatureSet {
    let mut rng = XorShift64Star::new(seed, 99);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for c in 0..classes {
        for _ in 0..per_class {
            let mut r: Vec<f64> = (0..dim).map(|_| (rng.unit() - 0.5) * 2.0 * noise).collect();
            r[c % dim] += spread * (1 + c / dim) as f64;
            rows.push(r);
            labels.push(c);
        }
    }
    FeatureSet::from_rows(&rows, Some(labels)).unwrap()
}

pub fn random_tensor(shape: Vec<usize>, rng: &mut XorShift64Star, scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| (rng.unit() * 2.0 - 1.0) * scale).collect()).unwrap()
}

/// Relative error `|a − b| / max(|a| + |b|, 1e-12)` over whole vectors.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / (na + nb).max(1e-12)
}

/// Compares backpropagated parameter gradients with central finite
/// differences of `L = Σ out · r` for a fixed random `r`. Returns the worst
/// relative error over parameterised layers.
pub fn gradient_check(input_shape: Vec<usize>, specs: Vec<LayerSpec>, batch: usize, seed: u64) -> f64 {
    let mut net = Network::new(input_shape.clone(), specs, WeightInit::Xavier, seed).unwrap();
    let mut rng = XorShift64Star::new(seed, 7);
    // Small random biases so ReLU/pool decisions are not on exact ties.
    for l in net.layers_mut() {
        if let Some(p) = &mut l.params {
            for b in p.bias.data_mut() {
                *b = (rng.unit() - 0.5) * 0.2;
            }
        }
    }
    let mut shape = vec![batch];
    shape.extend_from_slice(&input_shape);
    let x = random_tensor(shape, &mut rng, 1.0);
    let acts = net.forward(&x).unwrap();
    let out = acts.last().unwrap();
    let r = random_tensor(out.shape().to_vec(), &mut rng, 1.0);
    let loss = |n: &Network| -> f64 {
        let o = n.forward(&x).unwrap();
        o.last().unwrap().data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
    };
    let grads = net.backward(&acts, &r).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (&li, g) in &grads {
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for which in 0..2 {
            let len = {
                let p = net.layers()[li].params.as_ref().unwrap();
                if which == 0 { p.weight.len() } else { p.bias.len() }
            };
            // Check at most 40 entries per tensor, spread evenly.
            let stride = (len / 40).max(1);
            for j in (0..len).step_by(stride) {
                let orig = {
                    let p = net.layers_mut()[li].params.as_mut().unwrap();
                    let t = if which == 0 { &mut p.weight } else { &mut p.bias };
                    let o = t.data()[j];
                    t.data_mut()[j] = o + h;
                    o
                };
                let up = loss(&net);
                set_param(&mut net, li, which, j, orig - h);
                let down = loss(&net);
                set_param(&mut net, li, which, j, orig);
                numeric.push((up - down) / (2.0 * h));
                analytic.push(if which == 0 { g.weight.data()[j] } else { g.bias.data()[j] });
            }
        }
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    worst
}

fn set_param(net: &mut Network, li: usize, which: usize, j: usize, v: f64) {
    let p = net.layers_mut()[li].params.as_mut().unwrap();
    let t = if which == 0 { &mut p.weight } else { &mut p.bias };
    t.data_mut()[j] = v;
}

/// One small network per layer kind, each routing gradients through that
/// kind into a parameterised layer.
pub fn gradient_cases() -> Vec<(&'static str, Vec<usize>, Vec<LayerSpec>)> {
    use LayerSpec::*;
    vec![
        ("Dense", vec![5], vec![Dense { inputs: 5, outputs: 4 }]),
        ("Relu", vec![5], vec![Dense { inputs: 5, outputs: 6 }, Relu, Dense { inputs: 6, outputs: 3 }]),
        ("Sigmoid", vec![5], vec![Dense { inputs: 5, outputs: 4 }, Sigmoid]),
        ("Softmax", vec![5], vec![Dense { inputs: 5, outputs: 4 }, Softmax]),
        (
            "Conv2d",
            vec![2, 6, 6],
            vec![Conv2d { in_channels: 2, out_channels: 3, kernel: 3 }],
        ),
        (
            "ConvTranspose2d",
            vec![2, 3, 3],
            vec![ConvTranspose2d { in_channels: 2, out_channels: 2, kernel: 5 }],
        ),
        (
            "MaxPool2x2",
            vec![1, 6, 6],
            vec![Conv2d { in_channels: 1, out_channels: 2, kernel: 3 }, MaxPool2x2],
        ),
        (
            "Flatten",
            vec![1, 4, 4],
            vec![Conv2d { in_channels: 1, out_channels: 2, kernel: 3 }, Flatten, Dense { inputs: 32, outputs: 3 }],
        ),
        (
            "Unflatten",
            vec![6],
            vec![
                Dense { inputs: 6, outputs: 18 },
                Unflatten { channels: 2, height: 3, width: 3 },
                Conv2d { in_channels: 2, out_channels: 1, kernel: 3 },
            ],
        ),
    ]
}

/// Smallest K in `grid` whose P_Q clears `p_e − epsilon`, computed by
/// quantizing at every K independently.
pub fn exhaustive_select(
    fs: &FeatureSet,
    p_e: f64,
    epsilon: f64,
    grid: &[usize],
    seed: u64,
    classes: usize,
) -> Option<usize> {
    use seq_core::quantizer::{clustering_accuracy, quantize, KmeansConfig};
    let qualifying: Vec<usize> = grid
        .iter()
        .copied()
        .filter(|&k| {
            let (cb, _) = quantize(fs, &KmeansConfig::new(k).with_seed(seed), classes).unwrap();
            clustering_accuracy(&cb, fs).unwrap() > p_e - epsilon
        })
        .collect();
    qualifying.into_iter().min()
}

/// `n` 28×28 images in ten classes with two styles each: class `c` draws a
/// bar through row (style 0) or column (style 1) `3 + 2c`, over light noise.
pub fn synthetic_raw(n: usize, seed: u64) -> seq_core::data::RawDataset {
    let mut rng = XorShift64Star::new(seed, 21);
    let mut images = Vec::with_capacity(n * 784);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % 10;
        let style = (i / 10) % 2;
        let line = 3 + 2 * c;
        for y in 0..28 {
            for x in 0..28 {
                let along = if style == 0 { y } else { x };
                let v = if along == line || along == line + 1 {
                    200 + rng.below(56)
                } else {
                    rng.below(30)
                };
                images.push(v as u8);
            }
        }
        labels.push(c as u8);
    }
    seq_core::data::RawDataset {
        count: n,
        rows: 28,
        cols: 28,
        images,
        labels,
    }
}

/// Writes train/test splits of [`synthetic_raw`] with conventional names.
pub fn write_synthetic_idx(dir: &std::path::Path, train: usize, test: usize) {
    for (prefix, n, seed) in [("train", train, 1), ("t10k", test, 2)] {
        let (images, labels) = synthetic_raw(n, seed).to_idx();
        images.write(&dir.join(format!("{prefix}-images-idx3-ubyte"))).unwrap();
        labels.write(&dir.join(format!("{prefix}-labels-idx1-ubyte"))).unwrap();
    }
}
