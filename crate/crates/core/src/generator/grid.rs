use log::warn;
use rayon::prelude::*;

use super::decoder::DecoderModel;
use super::mix::{convex_combine, grid_alphas, StyleMix};
use super::GeneratorError;
use crate::nn::IMAGE_SIDE;
use crate::quantizer::{assign, sq_dist, Codebook, FeatureSet};

/// Rows × columns of square grayscale cells. Missing cells render blank.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    rows: usize,
    cols: usize,
    side: usize,
    cells: Vec<Option<Vec<f64>>>,
    annotated: Vec<bool>,
}

impl ImageGrid {
    pub fn new(rows: usize, cols: usize, side: usize) -> Self {
        Self {
            rows,
            cols,
            side,
            cells: vec![None; rows * cols],
            annotated: vec![false; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn set(&mut self, r: usize, c: usize, image: Vec<f64>, annotated: bool) -> Result<(), GeneratorError> {
        if r >= self.rows || c >= self.cols {
            return Err(GeneratorError::Precondition(format!(
                "cell ({r}, {c}) outside a {}×{} grid",
                self.rows, self.cols
            )));
        }
        if image.len() != self.side * self.side {
            return Err(GeneratorError::DimMismatch {
                expected: self.side * self.side,
                actual: image.len(),
            });
        }
        let k = r * self.cols + c;
        self.cells[k] = Some(image);
        self.annotated[k] = annotated;
        Ok(())
    }

    pub fn cell(&self, r: usize, c: usize) -> Option<&[f64]> {
        self.cells[r * self.cols + c].as_deref()
    }

    pub fn is_annotated(&self, r: usize, c: usize) -> bool {
        self.annotated[r * self.cols + c]
    }

    /// Number of cells holding an image.
    pub fn filled(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }

    pub fn annotated_count(&self) -> usize {
        self.annotated.iter().filter(|&&a| a).count()
    }
}

/// Per-cluster details for a cluster-means grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterCell {
    pub cluster: usize,
    pub label: usize,
    pub members: usize,
    /// Euclidean distance between the member mean and the stored centroid.
    pub centroid_gap: f64,
}

/// Decodes the mean feature of every non-empty cluster, ordered by cluster
/// label and then cluster index, at most ten cells per row.
pub fn cluster_mean_images(
    cb: &Codebook,
    fs: &FeatureSet,
    dec: &DecoderModel,
) -> Result<(ImageGrid, Vec<ClusterCell>), GeneratorError> {
    let assignments = assign(fs, cb.centroids())?;
    let mut members = vec![Vec::new(); cb.k()];
    for (i, &a) in assignments.iter().enumerate() {
        members[a].push(i);
    }
    let mut order: Vec<usize> = (0..cb.k()).collect();
    order.sort_by_key(|&j| (cb.cluster_labels()[j], j));
    let mut cells = Vec::new();
    let mut means = Vec::new();
    for j in order {
        if members[j].is_empty() {
            warn!("cluster {j} has no members; skipped");
            continue;
        }
        let mean = fs.mean_of(&members[j]);
        cells.push(ClusterCell {
            cluster: j,
            label: cb.cluster_labels()[j],
            members: members[j].len(),
            centroid_gap: sq_dist(&mean, cb.centroids().row(j)).sqrt(),
        });
        means.push(mean);
    }
    let images = decode_all(dec, &means)?;
    let cols = cells.len().clamp(1, 10);
    let rows = cells.len().div_ceil(cols).max(1);
    let mut grid = ImageGrid::new(rows, cols, IMAGE_SIDE);
    for (n, img) in images.into_iter().enumerate() {
        grid.set(n / cols, n % cols, img, false)?;
    }
    Ok((grid, cells))
}

fn decode_all(dec: &DecoderModel, zs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, GeneratorError> {
    zs.par_iter().map(|z| dec.decode(z)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixMode {
    /// Three samples from one cluster.
    IntraCluster,
    /// Three samples from distinct clusters that share a majority label.
    InterCluster,
}

/// A decoded interpolation grid and the weights used for each interior cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Interpolation {
    pub grid: ImageGrid,
    /// `(row, col, alpha1, alpha2)` for each interior cell.
    pub cells: Vec<(usize, usize, f64, f64)>,
    /// Clusters of the three source samples.
    pub clusters: [usize; 3],
    pub label: usize,
}

/// Checks that the three samples satisfy the mode's cluster precondition and
/// returns their clusters.
pub fn check_sources(mode: MixMode, cb: &Codebook, fs: &FeatureSet, ids: [usize; 3]) -> Result<[usize; 3], GeneratorError> {
    if let Some(&bad) = ids.iter().find(|&&i| i >= fs.rows()) {
        return Err(GeneratorError::Precondition(format!(
            "sample {bad} out of range ({} samples)",
            fs.rows()
        )));
    }
    let clusters = ids.map(|i| cb.centroids().nearest(fs.row(i)).0);
    let labels = clusters.map(|c| cb.cluster_labels()[c]);
    match mode {
        MixMode::IntraCluster => {
            if clusters[1] != clusters[0] || clusters[2] != clusters[0] {
                return Err(GeneratorError::Precondition(format!(
                    "intra-cluster mixing needs one cluster, samples are in clusters {clusters:?}"
                )));
            }
        }
        MixMode::InterCluster => {
            if clusters[0] == clusters[1] || clusters[0] == clusters[2] || clusters[1] == clusters[2] {
                return Err(GeneratorError::Precondition(format!(
                    "inter-cluster mixing needs three distinct clusters, got {clusters:?}"
                )));
            }
            if labels[1] != labels[0] || labels[2] != labels[0] {
                return Err(GeneratorError::Precondition(format!(
                    "inter-cluster mixing needs clusters with one label, got {labels:?}"
                )));
            }
        }
    }
    Ok(clusters)
}

/// A `(steps + 2) × (steps + 2)` grid. The three source decodes sit in the
/// top-left, top-right and bottom-right corners and are annotated; interior
/// cell `(1 + i, 1 + j)` decodes the mix with [`grid_alphas`]`(steps, i, j)`.
/// Remaining border cells are blank.
pub fn interpolation_grid(
    mode: MixMode,
    cb: &Codebook,
    fs: &FeatureSet,
    dec: &DecoderModel,
    ids: [usize; 3],
    steps: usize,
) -> Result<Interpolation, GeneratorError> {
    if steps == 0 {
        return Err(GeneratorError::Precondition("steps must be at least 1".into()));
    }
    let clusters = check_sources(mode, cb, fs, ids)?;
    let sources = ids.map(|i| fs.row(i).to_vec());
    let mut zs = sources.to_vec();
    let mut cells = Vec::with_capacity(steps * steps);
    for i in 0..steps {
        for j in 0..steps {
            let (a1, a2) = grid_alphas(steps, i, j);
            zs.push(convex_combine(&StyleMix::new(sources.clone(), a1, a2)?));
            cells.push((1 + i, 1 + j, a1, a2));
        }
    }
    let mut images = decode_all(dec, &zs)?.into_iter();
    let n = steps + 2;
    let mut grid = ImageGrid::new(n, n, IMAGE_SIDE);
    for (r, c) in [(0, 0), (0, n - 1), (n - 1, n - 1)] {
        grid.set(r, c, images.next().unwrap(), true)?;
    }
    for &(r, c, _, _) in &cells {
        grid.set(r, c, images.next().unwrap(), false)?;
    }
    Ok(Interpolation {
        grid,
        cells,
        clusters,
        label: cb.cluster_labels()[clusters[0]],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Arch, TrainConfig};
    use crate::quantizer::Centroids;

    fn setup() -> (Codebook, FeatureSet, DecoderModel) {
        // Clusters 0 and 1 carry label 4, cluster 2 label 7.
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (c, label) in [(0.0, 4), (10.0, 4), (20.0, 7)] {
            for k in 0..3 {
                let mut r = vec![0.0; 128];
                r[0] = c + k as f64 * 0.1;
                rows.push(r);
                labels.push(label);
            }
        }
        let fs = FeatureSet::from_rows(&rows, Some(labels.clone())).unwrap();
        let mut cents = vec![0.0; 3 * 128];
        for (j, c) in [0.1, 10.1, 20.1].iter().enumerate() {
            cents[j * 128] = *c;
        }
        let centroids = Centroids::new(cents, 3, 128).unwrap();
        let assignments = assign(&fs, &centroids).unwrap();
        let cb = Codebook::build(centroids, &assignments, &labels, 10).unwrap();
        (cb, fs, DecoderModel::new(Arch::Lae2, &TrainConfig::decoder_default()))
    }

    #[test]
    fn single_step_grid() {
        let (cb, fs, dec) = setup();
        let out = interpolation_grid(MixMode::IntraCluster, &cb, &fs, &dec, [0, 1, 2], 1).unwrap();
        assert_eq!((out.grid.rows(), out.grid.cols()), (3, 3));
        assert_eq!(out.grid.filled(), 4);
        assert_eq!(out.grid.annotated_count(), 3);
        assert!(out.grid.is_annotated(0, 0) && out.grid.is_annotated(0, 2) && out.grid.is_annotated(2, 2));
        assert!(out.grid.cell(1, 1).is_some() && out.grid.cell(2, 0).is_none());
        assert_eq!(out.grid.cell(0, 0).unwrap(), dec.decode(fs.row(0)).unwrap().as_slice());
    }

    #[test]
    fn preconditions() {
        let (cb, fs, dec) = setup();
        let err = |m, ids| interpolation_grid(m, &cb, &fs, &dec, ids, 2).unwrap_err();
        assert!(matches!(err(MixMode::IntraCluster, [0, 3, 1]), GeneratorError::Precondition(_)));
        // Distinct clusters, but cluster 2 has another label.
        assert!(matches!(err(MixMode::InterCluster, [0, 3, 6]), GeneratorError::Precondition(_)));
        // Only two distinct clusters.
        assert!(matches!(err(MixMode::InterCluster, [0, 1, 3]), GeneratorError::Precondition(_)));
        assert!(matches!(err(MixMode::IntraCluster, [0, 1, 99]), GeneratorError::Precondition(_)));
    }

    #[test]
    fn cluster_means_ordered_by_label() {
        let (cb, fs, dec) = setup();
        let (grid, cells) = cluster_mean_images(&cb, &fs, &dec).unwrap();
        assert_eq!(grid.filled(), 3);
        assert_eq!(cells.iter().map(|c| c.label).collect::<Vec<_>>(), vec![4, 4, 7]);
        for c in &cells {
            assert!(c.centroid_gap < 1e-12);
        }
    }
}
