use super::features::{sq_dist, FeatureSet};
use super::kmeans::{assign, Centroids};
use super::QuantizerError;

/// Per-cluster class histograms and their majority labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterLabels {
    pub labels: Vec<usize>,
    pub histograms: Vec<Vec<u64>>,
    /// Clusters that had no members and took their label from a neighbour.
    pub borrowed: Vec<usize>,
}

/// Majority vote per cluster, smallest class index on ties. Empty clusters
/// get the label of the nearest non-empty cluster when `centroids` is given,
/// otherwise of the smallest-index non-empty cluster.
pub fn label_clusters(
    assignments: &[usize],
    labels: &[usize],
    k: usize,
    num_classes: usize,
    centroids: Option<&Centroids>,
) -> Result<ClusterLabels, QuantizerError> {
    if assignments.len() != labels.len() {
        return Err(QuantizerError::LengthMismatch {
            expected: assignments.len(),
            actual: labels.len(),
        });
    }
    let mut histograms = vec![vec![0u64; num_classes]; k];
    for (i, (&a, &l)) in assignments.iter().zip(labels).enumerate() {
        if a >= k {
            return Err(QuantizerError::Config(format!("assignment {a} out of range for K={k}")));
        }
        if l >= num_classes {
            return Err(QuantizerError::LabelOutOfRange {
                index: i,
                label: l,
                classes: num_classes,
            });
        }
        histograms[a][l] += 1;
    }
    let majority = |h: &[u64]| {
        let mut best = 0;
        for (c, &n) in h.iter().enumerate() {
            if n > h[best] {
                best = c;
            }
        }
        best
    };
    let non_empty: Vec<usize> = (0..k).filter(|&j| histograms[j].iter().any(|&n| n > 0)).collect();
    if non_empty.is_empty() {
        return Err(QuantizerError::NoNonEmptyCluster);
    }
    let mut out = Vec::with_capacity(k);
    let mut borrowed = Vec::new();
    for j in 0..k {
        if histograms[j].iter().any(|&n| n > 0) {
            out.push(majority(&histograms[j]));
            continue;
        }
        let donor = match centroids {
            Some(c) => {
                let mut best = (non_empty[0], f64::INFINITY);
                for &o in &non_empty {
                    let d = sq_dist(c.row(j), c.row(o));
                    if d < best.1 {
                        best = (o, d);
                    }
                }
                best.0
            }
            None => non_empty[0],
        };
        out.push(majority(&histograms[donor]));
        borrowed.push(j);
    }
    Ok(ClusterLabels {
        labels: out,
        histograms,
        borrowed,
    })
}

/// Labeled centroids; immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    centroids: Centroids,
    cluster_labels: Vec<usize>,
    histograms: Vec<Vec<u64>>,
    num_classes: usize,
    borrowed: Vec<usize>,
}

impl Codebook {
    /// Labels `centroids` using the training features that produced them.
    pub fn build(
        centroids: Centroids,
        assignments: &[usize],
        labels: &[usize],
        num_classes: usize,
    ) -> Result<Self, QuantizerError> {
        let cl = label_clusters(assignments, labels, centroids.k(), num_classes, Some(&centroids))?;
        Ok(Self {
            centroids,
            cluster_labels: cl.labels,
            histograms: cl.histograms,
            num_classes,
            borrowed: cl.borrowed,
        })
    }

    /// Reassembles a codebook from stored parts, checking consistency.
    pub fn from_parts(
        centroids: Centroids,
        cluster_labels: Vec<usize>,
        histograms: Vec<Vec<u64>>,
        num_classes: usize,
    ) -> Result<Self, QuantizerError> {
        let k = centroids.k();
        if cluster_labels.len() != k || histograms.len() != k {
            return Err(QuantizerError::LengthMismatch {
                expected: k,
                actual: cluster_labels.len().min(histograms.len()),
            });
        }
        if let Some((j, &l)) = cluster_labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(QuantizerError::LabelOutOfRange {
                index: j,
                label: l,
                classes: num_classes,
            });
        }
        if histograms.iter().any(|h| h.len() != num_classes) {
            return Err(QuantizerError::Config("histogram width differs from class count".into()));
        }
        let borrowed = (0..k).filter(|&j| histograms[j].iter().all(|&n| n == 0)).collect();
        Ok(Self {
            centroids,
            cluster_labels,
            histograms,
            num_classes,
            borrowed,
        })
    }

    pub fn k(&self) -> usize {
        self.centroids.k()
    }

    pub fn dim(&self) -> usize {
        self.centroids.dim()
    }

    pub fn centroids(&self) -> &Centroids {
        &self.centroids
    }

    pub fn cluster_labels(&self) -> &[usize] {
        &self.cluster_labels
    }

    pub fn histograms(&self) -> &[Vec<u64>] {
        &self.histograms
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn borrowed_labels(&self) -> &[usize] {
        &self.borrowed
    }

    /// Number of training samples that landed in each cluster.
    pub fn cluster_sizes(&self) -> Vec<u64> {
        self.histograms.iter().map(|h| h.iter().sum()).collect()
    }

    pub fn classify(&self, x: &[f64]) -> Result<usize, QuantizerError> {
        if x.len() != self.dim() {
            return Err(QuantizerError::DimMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        Ok(self.cluster_labels[self.centroids.nearest(x).0])
    }

    pub fn classify_all(&self, fs: &FeatureSet) -> Result<Vec<usize>, QuantizerError> {
        Ok(assign(fs, &self.centroids)?
            .into_iter()
            .map(|a| self.cluster_labels[a])
            .collect())
    }
}

/// Fraction of labeled samples whose nearest cluster carries their label.
pub fn clustering_accuracy(cb: &Codebook, fs: &FeatureSet) -> Result<f64, QuantizerError> {
    let labels = fs.require_labels()?;
    let predicted = cb.classify_all(fs)?;
    let hits = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / fs.rows() as f64)
}
