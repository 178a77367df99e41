use super::GeneratorError;

/// Slack allowed when checking that weights lie on the simplex.
const SIMPLEX_TOL: f64 = 1e-12;

/// Three feature vectors and their convex weights.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleMix {
    features: [Vec<f64>; 3],
    alphas: [f64; 3],
}

impl StyleMix {
    /// `alpha3` is `1 − alpha1 − alpha2`.
    pub fn new(features: [Vec<f64>; 3], alpha1: f64, alpha2: f64) -> Result<Self, GeneratorError> {
        Self::with_weights(features, [alpha1, alpha2, 1.0 - alpha1 - alpha2])
    }

    pub fn with_weights(features: [Vec<f64>; 3], alphas: [f64; 3]) -> Result<Self, GeneratorError> {
        let dim = features[0].len();
        if let Some(f) = features.iter().find(|f| f.len() != dim) {
            return Err(GeneratorError::DimMismatch {
                expected: dim,
                actual: f.len(),
            });
        }
        let sum: f64 = alphas.iter().sum();
        if alphas.iter().any(|a| !a.is_finite() || *a < -SIMPLEX_TOL) || (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(GeneratorError::BadAlphas(alphas));
        }
        Ok(Self { features, alphas })
    }

    pub fn alphas(&self) -> [f64; 3] {
        self.alphas
    }

    pub fn features(&self) -> &[Vec<f64>; 3] {
        &self.features
    }

    /// True when `alpha1` and `alpha2` both lie strictly inside `(0, 0.5)`.
    pub fn is_interior(&self) -> bool {
        self.alphas[..2].iter().all(|&a| a > 0.0 && a < 0.5)
    }
}

/// `Σ αᵢ xᵢ`, element-wise. Vertex weights reproduce their input exactly.
pub fn convex_combine(mix: &StyleMix) -> Vec<f64> {
    let [a1, a2, a3] = mix.alphas;
    let [x1, x2, x3] = &mix.features;
    x1.iter()
        .zip(x2)
        .zip(x3)
        .map(|((&p, &q), &r)| {
            let mut v = 0.0;
            for (a, x) in [(a1, p), (a2, q), (a3, r)] {
                if a != 0.0 {
                    v += a * x;
                }
            }
            v
        })
        .collect()
}

/// Weights for interior cell `(i, j)` of a grid with `steps` interior rows
/// and columns. `alpha1` falls from top to bottom and `alpha2` rises from
/// left to right, both strictly inside `(0, 0.5)`.
pub fn grid_alphas(steps: usize, i: usize, j: usize) -> (f64, f64) {
    let s = steps as f64;
    let a1 = 0.5 * (s - i as f64) / (s + 1.0);
    let a2 = 0.5 * (j as f64 + 1.0) / (s + 1.0);
    (a1, a2)
}
