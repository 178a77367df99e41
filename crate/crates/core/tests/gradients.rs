mod common;

use proptest::prelude::*;
use seq_core::nn::{softmax_cross_entropy, squared_error, LayerSpec, Network, WeightInit};
use seq_core::rng::XorShift64Star;
use seq_core::tensor::Tensor;

#[test]
fn every_layer_kind_matches_finite_differences() {
    for (name, input, specs) in common::gradient_cases() {
        for seed in 0..20 {
            let err = common::gradient_check(input.clone(), specs.clone(), 3, seed);
            assert!(err < 1e-4, "{name} seed {seed}: relative error {err:e}");
        }
    }
}

fn fd_loss_grad(x: &Tensor, f: impl Fn(&Tensor) -> f64) -> Vec<f64> {
    let h = 1e-5;
    (0..x.len())
        .map(|i| {
            let mut up = x.clone();
            up.data_mut()[i] += h;
            let mut down = x.clone();
            down.data_mut()[i] -= h;
            (f(&up) - f(&down)) / (2.0 * h)
        })
        .collect()
}

#[test]
fn loss_gradients_match_finite_differences() {
    for seed in 0..20 {
        let mut rng = XorShift64Star::new(seed, 3);
        let logits = common::random_tensor(vec![4, 6], &mut rng, 3.0);
        let labels: Vec<usize> = (0..4).map(|_| rng.below(6)).collect();
        let (_, g) = softmax_cross_entropy(&logits, &labels).unwrap();
        let fd = fd_loss_grad(&logits, |t| softmax_cross_entropy(t, &labels).unwrap().0);
        assert!(common::rel_err(g.data(), &fd) < 1e-6);

        let x = common::random_tensor(vec![3, 5], &mut rng, 1.0);
        let x_hat = common::random_tensor(vec![3, 5], &mut rng, 1.0);
        let (_, g) = squared_error(&x, &x_hat).unwrap();
        let fd = fd_loss_grad(&x_hat, |t| squared_error(&x, t).unwrap().0);
        assert!(common::rel_err(g.data(), &fd) < 1e-6);
    }
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(vals in proptest::collection::vec(-800.0f64..800.0, 12)) {
        let net = Network::new(vec![4], vec![LayerSpec::Softmax], WeightInit::He, 0).unwrap();
        let out = net.infer(&Tensor::new(vec![3, 4], vals).unwrap(), 8).unwrap();
        for row in out.data().chunks(4) {
            prop_assert!(row.iter().all(|p| p.is_finite() && *p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
