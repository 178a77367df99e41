use super::QuantizerError;

/// `N × d` matrix of embedded features with optional aligned labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    data: Vec<f64>,
    rows: usize,
    dim: usize,
    labels: Option<Vec<usize>>,
}

impl FeatureSet {
    pub fn new(
        data: Vec<f64>,
        rows: usize,
        dim: usize,
        labels: Option<Vec<usize>>,
    ) -> Result<Self, QuantizerError> {
        if rows == 0 || dim == 0 {
            return Err(QuantizerError::Empty);
        }
        if data.len() != rows * dim {
            return Err(QuantizerError::LengthMismatch {
                expected: rows * dim,
                actual: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(QuantizerError::NonFinite { row: i / dim });
        }
        if let Some(l) = &labels {
            if l.len() != rows {
                return Err(QuantizerError::LengthMismatch {
                    expected: rows,
                    actual: l.len(),
                });
            }
        }
        Ok(Self {
            data,
            rows,
            dim,
            labels,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], labels: Option<Vec<usize>>) -> Result<Self, QuantizerError> {
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(QuantizerError::DimMismatch {
                    expected: dim,
                    actual: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(data, rows.len(), dim, labels)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn require_labels(&self) -> Result<&[usize], QuantizerError> {
        self.labels().ok_or(QuantizerError::MissingLabels)
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            data,
            rows: indices.len(),
            dim: self.dim,
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
        }
    }

    /// Element-wise mean of the rows at `indices`.
    pub fn mean_of(&self, indices: &[usize]) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        for &i in indices {
            for (m, v) in mean.iter_mut().zip(self.row(i)) {
                *m += v;
            }
        }
        let n = indices.len().max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }
}

/// Squared Euclidean distance with a fixed 4-lane summation order.
#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..4 {
            let d = x[l] - y[l];
            acc[l] += d * d;
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        let d = x - y;
        tail += d * d;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
