//! Lloyd's k-means with Hamerly's bounds.
//!
//! The bounds only skip distance computations that provably cannot change a
//! point's nearest centroid, so the iterates are exactly those of plain Lloyd
//! iteration (including the smallest-index tie rule). Pruning uses a small
//! relative slack so rounding in the bounds can never hide a tie.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::{sq_dist, FeatureSet};
use super::QuantizerError;
use crate::rng::{stream, XorShift64Star};

const PRUNE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KmeansInit {
    /// D²-weighted seeding.
    #[default]
    Kmeanspp,
    /// K distinct rows chosen uniformly at random.
    Forgy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KmeansConfig {
    pub k: usize,
    #[serde(default)]
    pub init: KmeansInit,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Stop once no centroid moves by this much (Euclidean) in one update.
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub seed: u64,
    /// Independent initialisations; the lowest-inertia run is kept.
    #[serde(default = "default_restarts")]
    pub restarts: usize,
}

fn default_max_iter() -> usize {
    300
}
fn default_tol() -> f64 {
    1e-6
}
fn default_restarts() -> usize {
    1
}

impl KmeansConfig {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            init: KmeansInit::Kmeanspp,
            max_iter: default_max_iter(),
            tol: default_tol(),
            seed: 0,
            restarts: default_restarts(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// `K × d` centroid matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Centroids {
    data: Vec<f64>,
    k: usize,
    dim: usize,
}

impl Centroids {
    pub fn new(data: Vec<f64>, k: usize, dim: usize) -> Result<Self, QuantizerError> {
        if k == 0 || dim == 0 {
            return Err(QuantizerError::Empty);
        }
        if data.len() != k * dim {
            return Err(QuantizerError::LengthMismatch {
                expected: k * dim,
                actual: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(QuantizerError::NonFinite { row: i / dim });
        }
        Ok(Self { data, k, dim })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.data[j * self.dim..(j + 1) * self.dim]
    }

    /// Index of the nearest centroid (smallest index on ties) and its squared
    /// distance.
    pub fn nearest(&self, x: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for j in 0..self.k {
            let d = sq_dist(x, self.row(j));
            if d < best.1 {
                best = (j, d);
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KmeansFit {
    pub centroids: Centroids,
    pub assignments: Vec<usize>,
    /// Sum of squared distances to the assigned centroids.
    pub inertia: f64,
    /// Inertia after each assignment step, starting with the seeding.
    pub inertia_trace: Vec<f64>,
    /// Completed centroid updates.
    pub iterations: usize,
    pub converged: bool,
    /// Empty clusters reseeded during the run.
    pub repairs: usize,
    /// Restart that produced this fit.
    pub restart: usize,
}

/// Nearest-centroid assignment for every row (smallest index on ties).
pub fn assign(fs: &FeatureSet, centroids: &Centroids) -> Result<Vec<usize>, QuantizerError> {
    if fs.dim() != centroids.dim() {
        return Err(QuantizerError::DimMismatch {
            expected: centroids.dim(),
            actual: fs.dim(),
        });
    }
    Ok(fs
        .iter_rows()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|x| centroids.nearest(x).0)
        .collect())
}

/// Runs `cfg.restarts` seeded k-means fits and keeps the lowest inertia
/// (earliest restart on ties).
pub fn kmeans_fit(fs: &FeatureSet, cfg: &KmeansConfig) -> Result<KmeansFit, QuantizerError> {
    if cfg.k == 0 {
        return Err(QuantizerError::ZeroK);
    }
    if cfg.k > fs.rows() {
        return Err(QuantizerError::KTooLarge {
            k: cfg.k,
            n: fs.rows(),
        });
    }
    if !(cfg.tol >= 0.0) || cfg.restarts == 0 {
        return Err(QuantizerError::Config(format!(
            "tol must be non-negative and restarts positive (tol {}, restarts {})",
            cfg.tol, cfg.restarts
        )));
    }
    let mut best: Option<KmeansFit> = None;
    for restart in 0..cfg.restarts {
        let mut rng = XorShift64Star::new(cfg.seed, stream::KMEANS_BASE + restart as u64);
        let init = match cfg.init {
            KmeansInit::Kmeanspp => init_plus_plus(fs, cfg.k, &mut rng),
            KmeansInit::Forgy => init_forgy(fs, cfg.k, &mut rng),
        };
        let mut fit = lloyd(fs, init, cfg.max_iter, cfg.tol);
        fit.restart = restart;
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Lloyd iteration from the given starting centroids (a single run, no
/// seeding).
pub fn lloyd_from(fs: &FeatureSet, init: Centroids, max_iter: usize, tol: f64) -> Result<KmeansFit, QuantizerError> {
    if init.dim() != fs.dim() {
        return Err(QuantizerError::DimMismatch {
            expected: fs.dim(),
            actual: init.dim(),
        });
    }
    if init.k() > fs.rows() {
        return Err(QuantizerError::KTooLarge {
            k: init.k(),
            n: fs.rows(),
        });
    }
    Ok(lloyd(fs, init, max_iter, tol))
}

fn init_forgy(fs: &FeatureSet, k: usize, rng: &mut XorShift64Star) -> Centroids {
    let n = fs.rows();
    let mut idx: Vec<usize> = (0..n).collect();
    for t in 0..k {
        let j = t + rng.below(n - t);
        idx.swap(t, j);
    }
    let mut data = Vec::with_capacity(k * fs.dim());
    for &i in &idx[..k] {
        data.extend_from_slice(fs.row(i));
    }
    Centroids {
        data,
        k,
        dim: fs.dim(),
    }
}

fn init_plus_plus(fs: &FeatureSet, k: usize, rng: &mut XorShift64Star) -> Centroids {
    let n = fs.rows();
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.below(n));
    let mut d2: Vec<f64> = fs.iter_rows().map(|x| sq_dist(x, fs.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.unit() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    pick = Some(i);
                    break;
                }
            }
            // Rounding can leave `acc` just short of `target`.
            pick.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).unwrap())
        } else {
            rng.below(n)
        };
        chosen.push(next);
        let c = fs.row(next);
        for (d, x) in d2.iter_mut().zip(fs.iter_rows()) {
            *d = d.min(sq_dist(x, c));
        }
    }
    let mut data = Vec::with_capacity(k * fs.dim());
    for &i in &chosen {
        data.extend_from_slice(fs.row(i));
    }
    Centroids {
        data,
        k,
        dim: fs.dim(),
    }
}

/// Per-point Hamerly state.
#[derive(Clone, Copy)]
struct Bounds {
    assigned: usize,
    /// Upper bound on the distance to the assigned centroid.
    upper: f64,
    /// Lower bound on the distance to every other centroid.
    lower: f64,
}

fn full_scan(x: &[f64], c: &Centroids) -> Bounds {
    let (mut best, mut best_d, mut second_d) = (0, f64::INFINITY, f64::INFINITY);
    for j in 0..c.k {
        let d = sq_dist(x, c.row(j));
        if d < best_d {
            second_d = best_d;
            best_d = d;
            best = j;
        } else if d < second_d {
            second_d = d;
        }
    }
    Bounds {
        assigned: best,
        upper: best_d.sqrt(),
        lower: second_d.sqrt(),
    }
}

/// Half the distance from each centroid to its nearest neighbour.
fn half_separation(c: &Centroids) -> Vec<f64> {
    let mut s = vec![f64::INFINITY; c.k];
    for a in 0..c.k {
        for b in a + 1..c.k {
            let d = sq_dist(c.row(a), c.row(b)).sqrt() / 2.0;
            s[a] = s[a].min(d);
            s[b] = s[b].min(d);
        }
    }
    s
}

/// One assignment step; returns how many points changed cluster.
fn assign_step(fs: &FeatureSet, c: &Centroids, bounds: &mut [Bounds]) -> usize {
    let s = half_separation(c);
    bounds
        .par_iter_mut()
        .enumerate()
        .map(|(i, b)| {
            let x = fs.row(i);
            let m = s[b.assigned].max(b.lower);
            if b.upper * (1.0 + PRUNE_SLACK) < m {
                return 0;
            }
            b.upper = sq_dist(x, c.row(b.assigned)).sqrt();
            if b.upper * (1.0 + PRUNE_SLACK) < m {
                return 0;
            }
            let prev = b.assigned;
            *b = full_scan(x, c);
            usize::from(b.assigned != prev)
        })
        .sum()
}

/// Reseeds each empty cluster at the point farthest from its centroid
/// (taken from clusters with more than one member, smallest index on ties).
fn repair_empty(fs: &FeatureSet, c: &mut Centroids, bounds: &mut [Bounds]) -> usize {
    let mut counts = vec![0usize; c.k];
    for b in bounds.iter() {
        counts[b.assigned] += 1;
    }
    let mut repairs = 0;
    for j in 0..c.k {
        if counts[j] > 0 {
            continue;
        }
        let mut far: Option<(usize, f64)> = None;
        for (i, b) in bounds.iter().enumerate() {
            if counts[b.assigned] < 2 {
                continue;
            }
            let d = sq_dist(fs.row(i), c.row(b.assigned));
            if far.is_none_or(|(_, fd)| d > fd) {
                far = Some((i, d));
            }
        }
        let Some((i, _)) = far else { break };
        counts[bounds[i].assigned] -= 1;
        counts[j] = 1;
        let dim = c.dim;
        c.data[j * dim..(j + 1) * dim].copy_from_slice(fs.row(i));
        bounds[i] = Bounds {
            assigned: j,
            upper: 0.0,
            lower: 0.0,
        };
        repairs += 1;
    }
    if repairs > 0 {
        // A centroid jumped; every second-nearest bound is now suspect.
        for b in bounds.iter_mut() {
            b.lower = 0.0;
        }
    }
    repairs
}

fn exact_inertia(fs: &FeatureSet, c: &Centroids, bounds: &[Bounds]) -> f64 {
    bounds
        .iter()
        .enumerate()
        .map(|(i, b)| sq_dist(fs.row(i), c.row(b.assigned)))
        .sum()
}

fn lloyd(fs: &FeatureSet, mut c: Centroids, max_iter: usize, tol: f64) -> KmeansFit {
    let k = c.k;
    let dim = c.dim;
    let mut bounds: Vec<Bounds> = fs
        .iter_rows()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|x| full_scan(x, &c))
        .collect();
    let mut repairs = repair_empty(fs, &mut c, &mut bounds);
    let mut trace = vec![exact_inertia(fs, &c, &bounds)];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        // Update: centroids become the means of their members, summed in row order.
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (i, b) in bounds.iter().enumerate() {
            counts[b.assigned] += 1;
            for (s, v) in sums[b.assigned * dim..(b.assigned + 1) * dim].iter_mut().zip(fs.row(i)) {
                *s += v;
            }
        }
        let mut moves = vec![0.0; k];
        for j in 0..k {
            if counts[j] == 0 {
                continue;
            }
            let inv = counts[j] as f64;
            let row = &mut sums[j * dim..(j + 1) * dim];
            row.iter_mut().for_each(|v| *v /= inv);
            moves[j] = sq_dist(row, c.row(j)).sqrt();
            c.data[j * dim..(j + 1) * dim].copy_from_slice(row);
        }
        iterations += 1;
        let shift = moves.iter().copied().fold(0.0, f64::max);

        // Loosen bounds by how far centroids moved.
        let (mut top, mut top_j, mut second) = (0.0, usize::MAX, 0.0);
        for (j, &m) in moves.iter().enumerate() {
            if m > top {
                second = top;
                top = m;
                top_j = j;
            } else if m > second {
                second = m;
            }
        }
        for b in bounds.iter_mut() {
            b.upper += moves[b.assigned];
            b.lower -= if b.assigned == top_j { second } else { top };
        }

        let changed = assign_step(fs, &c, &mut bounds);
        let repaired = repair_empty(fs, &mut c, &mut bounds);
        repairs += repaired;
        trace.push(exact_inertia(fs, &c, &bounds));
        if (changed == 0 && repaired == 0) || shift < tol {
            converged = true;
            break;
        }
    }
    if repairs > 0 {
        warn!("k-means reseeded {repairs} empty cluster(s); data may contain duplicate points");
    }
    let inertia = *trace.last().unwrap();
    KmeansFit {
        centroids: c,
        assignments: bounds.iter().map(|b| b.assigned).collect(),
        inertia,
        inertia_trace: trace,
        iterations,
        converged,
        repairs,
        restart: 0,
    }
}
