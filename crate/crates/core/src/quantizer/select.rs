use log::{info, warn};
use serde::Serialize;

use super::codebook::{clustering_accuracy, Codebook};
use super::features::FeatureSet;
use super::kmeans::{kmeans_fit, KmeansConfig, KmeansFit};
use super::QuantizerError;

/// Default slack for the K-selection rule.
pub const DEFAULT_EPSILON: f64 = 0.01;

/// Result of quantizing at one K.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KRecord {
    pub k: usize,
    /// Clustering accuracy on the features the codebook was fit to.
    pub p_q_train: f64,
    /// Nearest-centroid accuracy on held-out features, when provided.
    pub acc_test: Option<f64>,
    pub inertia: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizerReport {
    /// The selected K, if any candidate satisfied the rule.
    pub selected: Option<usize>,
    /// P_Q at the selected K (or at the last candidate tried).
    pub p_q: f64,
    pub p_e: f64,
    pub epsilon: f64,
    pub inertia: f64,
    pub records: Vec<KRecord>,
}

/// Fits k-means at `cfg.k` and labels the clusters with `fs`'s labels.
pub fn quantize(fs: &FeatureSet, cfg: &KmeansConfig, num_classes: usize) -> Result<(Codebook, KmeansFit), QuantizerError> {
    let labels = fs.require_labels()?;
    let fit = kmeans_fit(fs, cfg)?;
    let cb = Codebook::build(fit.centroids.clone(), &fit.assignments, labels, num_classes)?;
    if !cb.borrowed_labels().is_empty() {
        warn!("clusters {:?} are empty and borrowed a neighbour's label", cb.borrowed_labels());
    }
    Ok((cb, fit))
}

fn validate_grid(k_grid: &[usize]) -> Result<(), QuantizerError> {
    if k_grid.is_empty() || k_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(QuantizerError::BadGrid(k_grid.to_vec()));
    }
    if k_grid[0] == 0 {
        return Err(QuantizerError::ZeroK);
    }
    Ok(())
}

fn record(
    fs: &FeatureSet,
    test: Option<&FeatureSet>,
    cfg: &KmeansConfig,
    k: usize,
    num_classes: usize,
) -> Result<(KRecord, Codebook), QuantizerError> {
    let cfg = KmeansConfig { k, ..cfg.clone() };
    let (cb, fit) = quantize(fs, &cfg, num_classes)?;
    let p_q_train = clustering_accuracy(&cb, fs)?;
    let acc_test = test.map(|t| clustering_accuracy(&cb, t)).transpose()?;
    info!(
        "K={k}: P_Q train {p_q_train:.4}{} inertia {:.4}",
        acc_test.map_or(String::new(), |a| format!(" test {a:.4}")),
        fit.inertia
    );
    Ok((
        KRecord {
            k,
            p_q_train,
            acc_test,
            inertia: fit.inertia,
            seed: cfg.seed,
        },
        cb,
    ))
}

/// Smallest K in the ascending grid with `P_Q > P_E − ε`. Each candidate gets
/// a fresh fit with the same seed. Stops at the first qualifying K.
pub fn select_k(
    fs: &FeatureSet,
    p_e: f64,
    epsilon: f64,
    k_grid: &[usize],
    cfg: &KmeansConfig,
    num_classes: usize,
) -> Result<(QuantizerReport, Option<Codebook>), QuantizerError> {
    validate_grid(k_grid)?;
    if !(0.0..1.0).contains(&epsilon) {
        return Err(QuantizerError::BadEpsilon(epsilon));
    }
    if !(0.0..=1.0).contains(&p_e) {
        return Err(QuantizerError::Config(format!("P_E must lie in [0, 1], got {p_e}")));
    }
    let mut records = Vec::new();
    for &k in k_grid {
        let (rec, cb) = record(fs, None, cfg, k, num_classes)?;
        let ok = rec.p_q_train > p_e - epsilon;
        records.push(rec);
        if ok {
            let last = records.last().unwrap();
            return Ok((
                QuantizerReport {
                    selected: Some(k),
                    p_q: last.p_q_train,
                    p_e,
                    epsilon,
                    inertia: last.inertia,
                    records,
                },
                Some(cb),
            ));
        }
    }
    let last = records.last().unwrap();
    Ok((
        QuantizerReport {
            selected: None,
            p_q: last.p_q_train,
            p_e,
            epsilon,
            inertia: last.inertia,
            records,
        },
        None,
    ))
}

/// Quantizes at every K in the grid and reports train and test accuracy.
/// Warns when test accuracy exceeds the encoder's, which the quantizer is
/// normally bounded by.
pub fn sweep_k(
    fs: &FeatureSet,
    test: Option<&FeatureSet>,
    k_grid: &[usize],
    cfg: &KmeansConfig,
    num_classes: usize,
    p_e: Option<f64>,
) -> Result<Vec<KRecord>, QuantizerError> {
    validate_grid(k_grid)?;
    let mut out = Vec::with_capacity(k_grid.len());
    for &k in k_grid {
        let (rec, _) = record(fs, test, cfg, k, num_classes)?;
        if let (Some(acc), Some(pe)) = (rec.acc_test, p_e) {
            if acc > pe {
                warn!("K={k}: quantizer test accuracy {acc:.4} exceeds encoder accuracy {pe:.4}");
            }
        }
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_points() -> FeatureSet {
        FeatureSet::from_rows(&[[0.0], [1.0], [5.0]], Some(vec![0, 0, 1])).unwrap()
    }

    #[test]
    fn grid_and_epsilon_validation() {
        let fs = two_points();
        let cfg = KmeansConfig::new(1);
        assert!(matches!(select_k(&fs, 0.9, 0.01, &[], &cfg, 2), Err(QuantizerError::BadGrid(_))));
        assert!(matches!(select_k(&fs, 0.9, 0.01, &[2, 2], &cfg, 2), Err(QuantizerError::BadGrid(_))));
        assert!(matches!(select_k(&fs, 0.9, 1.0, &[1], &cfg, 2), Err(QuantizerError::BadEpsilon(_))));
        assert!(matches!(select_k(&fs, 0.9, -0.1, &[1], &cfg, 2), Err(QuantizerError::BadEpsilon(_))));
    }

    #[test]
    fn generous_epsilon_takes_first_k() {
        let fs = two_points();
        let (rep, cb) = select_k(&fs, 0.98, 0.999, &[1, 2], &KmeansConfig::new(1), 2).unwrap();
        assert_eq!(rep.selected, Some(1));
        assert_eq!(rep.records.len(), 1);
        assert!(cb.is_some());
    }

    #[test]
    fn not_found_reports_all() {
        let fs = two_points();
        let (rep, cb) = select_k(&fs, 1.0, 0.0, &[1], &KmeansConfig::new(1), 2).unwrap();
        assert_eq!(rep.selected, None);
        assert_eq!(rep.records.len(), 1);
        assert!(cb.is_none());
    }
}
