use super::NnError;
use crate::tensor::Tensor;

/// Probability floor for the true class before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;
const ROW_SUM_TOL: f64 = 1e-9;

fn check_labels(rows: usize, classes: usize, labels: &[usize]) -> Result<(), NnError> {
    if labels.len() != rows {
        return Err(NnError::BatchMismatch {
            rows,
            labels: labels.len(),
        });
    }
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        return Err(NnError::LabelOutOfRange {
            index,
            label,
            classes,
        });
    }
    Ok(())
}

fn as_rows(t: &Tensor) -> Result<(usize, usize), NnError> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        other => Err(NnError::ShapeMismatch {
            layer: 0,
            expected: vec![0, 0],
            actual: other.to_vec(),
        }),
    }
}

/// Mean negative log-probability of the true labels.
///
/// Each row of `probs` must sum to 1 within `1e-9`; zero probabilities are
/// floored at [`PROB_FLOOR`] so the loss stays finite.
pub fn cross_entropy(probs: &Tensor, labels: &[usize]) -> Result<f64, NnError> {
    let (rows, classes) = as_rows(probs)?;
    check_labels(rows, classes, labels)?;
    let mut total = 0.0;
    for (row_idx, (row, &label)) in probs.data().chunks_exact(classes).zip(labels).enumerate() {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL || row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(NnError::NotProbabilities { row: row_idx, sum });
        }
        total -= row[label].max(PROB_FLOOR).ln();
    }
    Ok(total / rows as f64)
}

/// Softmax followed by cross-entropy, computed from logits in the log
/// domain. Returns the mean loss and its gradient with respect to the
/// logits, `(softmax(z) - onehot) / batch`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor), NnError> {
    let (rows, classes) = as_rows(logits)?;
    check_labels(rows, classes, labels)?;
    let mut grad = Tensor::zeros(vec![rows, classes]);
    let mut total = 0.0;
    let scale = 1.0 / rows as f64;
    for ((z, g), &label) in logits
        .data()
        .chunks_exact(classes)
        .zip(grad.data_mut().chunks_exact_mut(classes))
        .zip(labels)
    {
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        total += lse - z[label];
        for (gv, &zv) in g.iter_mut().zip(z) {
            *gv = (zv - lse).exp() * scale;
        }
        g[label] -= scale;
    }
    Ok((total * scale, grad))
}

/// Mean of squared element-wise differences.
pub fn mse(x: &Tensor, x_hat: &Tensor) -> Result<f64, NnError> {
    if x.shape() != x_hat.shape() {
        return Err(NnError::ShapeMismatch {
            layer: 0,
            expected: x.shape().to_vec(),
            actual: x_hat.shape().to_vec(),
        });
    }
    let sum: f64 = x
        .data()
        .iter()
        .zip(x_hat.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / x.len() as f64)
}

/// Batch mean of the per-sample squared reconstruction norm
/// `||x - x_hat||^2`, with its gradient with respect to `x_hat`.
pub fn squared_error(x: &Tensor, x_hat: &Tensor) -> Result<(f64, Tensor), NnError> {
    if x.shape() != x_hat.shape() {
        return Err(NnError::ShapeMismatch {
            layer: 0,
            expected: x.shape().to_vec(),
            actual: x_hat.shape().to_vec(),
        });
    }
    let n = x.batch() as f64;
    let mut grad = Tensor::zeros(x.shape().to_vec());
    let mut total = 0.0;
    for ((g, &a), &b) in grad.data_mut().iter_mut().zip(x.data()).zip(x_hat.data()) {
        let d = b - a;
        total += d * d;
        *g = 2.0 * d / n;
    }
    Ok((total / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(cross_entropy(&t(&[1, 2], &[1., 0.]), &[0]).unwrap(), 0.0);
        let uniform = cross_entropy(&t(&[1, 2], &[0.5, 0.5]), &[1]).unwrap();
        assert!((uniform - std::f64::consts::LN_2).abs() < 1e-15);
        let two = cross_entropy(&t(&[2, 2], &[0.9, 0.1, 0.2, 0.8]), &[0, 1]).unwrap();
        let want = -(0.9f64.ln() + 0.8f64.ln()) / 2.0;
        assert!((two - want).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_floors_zero_probability() {
        let loss = cross_entropy(&t(&[1, 2], &[1., 0.]), &[1]).unwrap();
        assert!(loss.is_finite());
        assert!((loss + PROB_FLOOR.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_errors() {
        assert!(matches!(
            cross_entropy(&t(&[1, 2], &[0.5, 0.5]), &[2]),
            Err(NnError::LabelOutOfRange { label: 2, .. })
        ));
        assert!(matches!(
            cross_entropy(&t(&[1, 2], &[0.7, 0.5]), &[0]),
            Err(NnError::NotProbabilities { row: 0, .. })
        ));
        assert!(matches!(
            cross_entropy(&t(&[1, 2], &[0.5, 0.5]), &[0, 1]),
            Err(NnError::BatchMismatch { .. })
        ));
    }

    #[test]
    fn fused_loss_matches_two_step() {
        let logits = t(&[2, 3], &[1.0, -2.0, 0.5, 30.0, 29.0, -40.0]);
        let (loss, grad) = softmax_cross_entropy(&logits, &[2, 1]).unwrap();
        let mut probs = Tensor::zeros(vec![2, 3]);
        for (z, p) in logits.data().chunks(3).zip(probs.data_mut().chunks_mut(3)) {
            crate::nn::layer::softmax_row(z, p);
        }
        let two_step = cross_entropy(&probs, &[2, 1]).unwrap();
        assert!((loss - two_step).abs() < 1e-12);
        // Each gradient row sums to zero.
        for row in grad.data().chunks(3) {
            assert!(row.iter().sum::<f64>().abs() < 1e-15);
        }
    }

    #[test]
    fn fused_loss_is_finite_for_huge_logits() {
        let (loss, grad) = softmax_cross_entropy(&t(&[1, 2], &[1e4, -1e4]), &[1]).unwrap();
        assert!(loss.is_finite() && grad.all_finite());
        assert!((loss - 2e4).abs() < 1e-6);
    }

    #[test]
    fn mse_examples() {
        let x = t(&[1, 3], &[1., 2., 3.]);
        assert_eq!(mse(&x, &x).unwrap(), 0.0);
        assert_eq!(mse(&t(&[2], &[0., 0.]), &t(&[2], &[1., 1.])).unwrap(), 1.0);
        let got = mse(&x, &t(&[1, 3], &[1., 1., 1.])).unwrap();
        assert!((got - 5.0 / 3.0).abs() < 1e-15);
        assert!(mse(&x, &t(&[3], &[1., 1., 1.])).is_err());
    }

    #[test]
    fn squared_error_gradient() {
        let x = t(&[2, 2], &[0., 1., 1., 0.]);
        let xh = t(&[2, 2], &[0.5, 1., 1., 1.]);
        let (loss, grad) = squared_error(&x, &xh).unwrap();
        assert!((loss - (0.25 + 1.0) / 2.0).abs() < 1e-15);
        assert_eq!(grad.data(), &[0.5, 0.0, 0.0, 1.0]);
    }
}
