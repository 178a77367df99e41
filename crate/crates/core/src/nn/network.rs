use std::collections::BTreeMap;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::layer::{self, LayerSpec, Params};
use super::NnError;
use crate::rng::{stream, XorShift64Star};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightInit {
    /// Normal with variance `2 / fan_in`.
    #[default]
    He,
    /// Normal with variance `2 / (fan_in + fan_out)`.
    Xavier,
}

/// Parameter gradients keyed by layer index. Frozen and parameter-free
/// layers never appear.
pub type Gradients = BTreeMap<usize, Params>;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub params: Option<Params>,
    pub frozen: bool,
}

/// A strictly sequential network with shapes validated at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    /// Per-sample shape after each layer; `shapes[0]` is the input shape.
    shapes: Vec<Vec<usize>>,
}

fn shape_chain(input_shape: &[usize], specs: &[LayerSpec]) -> Result<Vec<Vec<usize>>, NnError> {
    let mut shapes = vec![input_shape.to_vec()];
    for (i, spec) in specs.iter().enumerate() {
        let next = spec
            .output_shape(shapes.last().unwrap())
            .map_err(|reason| NnError::InvalidArchitecture { layer: i, reason })?;
        shapes.push(next);
    }
    Ok(shapes)
}

impl Network {
    /// Builds a network with freshly initialised weights and zero biases.
    pub fn new(
        input_shape: Vec<usize>,
        specs: Vec<LayerSpec>,
        init: WeightInit,
        seed: u64,
    ) -> Result<Self, NnError> {
        let shapes = shape_chain(&input_shape, &specs)?;
        let mut rng = XorShift64Star::new(seed, stream::WEIGHT_INIT);
        let layers = specs
            .into_iter()
            .map(|spec| {
                let params = spec.param_shapes().map(|(ws, bs)| {
                    let (fan_in, fan_out) = spec.fans();
                    let var = match init {
                        WeightInit::He => 2.0 / fan_in as f64,
                        WeightInit::Xavier => 2.0 / (fan_in + fan_out) as f64,
                    };
                    let std = var.sqrt();
                    let len: usize = ws.iter().product();
                    let w: Vec<f64> = (0..len)
                        .map(|_| { let z: f64 = StandardNormal.sample(&mut rng); std * z })
                        .collect();
                    Params {
                        weight: Tensor::new(ws, w).expect("weight shape"),
                        bias: Tensor::zeros(bs),
                    }
                });
                Layer {
                    spec,
                    params,
                    frozen: false,
                }
            })
            .collect();
        Ok(Self {
            input_shape,
            layers,
            shapes,
        })
    }

    /// Reassembles a network from stored layers, checking every parameter
    /// shape against its spec.
    pub fn from_layers(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self, NnError> {
        let specs: Vec<LayerSpec> = layers.iter().map(|l| l.spec).collect();
        let shapes = shape_chain(&input_shape, &specs)?;
        for (i, l) in layers.iter().enumerate() {
            match (l.spec.param_shapes(), &l.params) {
                (None, None) => {}
                (Some((ws, bs)), Some(p)) => {
                    if p.weight.shape() != ws.as_slice() {
                        return Err(NnError::ParamShape {
                            layer: i,
                            expected: ws,
                            actual: p.weight.shape().to_vec(),
                        });
                    }
                    if p.bias.shape() != bs.as_slice() {
                        return Err(NnError::ParamShape {
                            layer: i,
                            expected: bs,
                            actual: p.bias.shape().to_vec(),
                        });
                    }
                }
                (expected, _) => {
                    return Err(NnError::ParamShape {
                        layer: i,
                        expected: expected.map(|(w, _)| w).unwrap_or_default(),
                        actual: l.params.as_ref().map(|p| p.weight.shape().to_vec()).unwrap_or_default(),
                    })
                }
            }
        }
        Ok(Self {
            input_shape,
            layers,
            shapes,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().unwrap()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        for l in &mut self.layers {
            l.frozen = frozen;
        }
    }

    pub fn is_fully_frozen(&self) -> bool {
        self.layers.iter().all(|l| l.frozen || l.params.is_none())
    }

    /// Drops every layer from `len` onwards (e.g. a classification head).
    pub fn truncate(&mut self, len: usize) {
        self.layers.truncate(len);
        self.shapes.truncate(len + 1);
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .filter_map(|l| l.params.as_ref())
            .map(|p| p.weight.len() + p.bias.len())
            .sum()
    }

    fn check_input(&self, batch: &Tensor) -> Result<(), NnError> {
        if batch.shape().len() < 2 || batch.sample_shape() != self.input_shape.as_slice() {
            return Err(NnError::ShapeMismatch {
                layer: 0,
                expected: self.input_shape.clone(),
                actual: batch.shape().get(1..).unwrap_or_default().to_vec(),
            });
        }
        Ok(())
    }

    /// Runs the batch through every layer, returning the input followed by
    /// each layer's output (`len() + 1` tensors).
    pub fn forward(&self, batch: &Tensor) -> Result<Vec<Tensor>, NnError> {
        self.check_input(batch)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(batch.clone());
        for l in &self.layers {
            let next = layer::forward(&l.spec, l.params.as_ref(), acts.last().unwrap());
            acts.push(next);
        }
        Ok(acts)
    }

    /// Final output only, processed in chunks of `chunk` samples to bound
    /// memory.
    pub fn infer(&self, batch: &Tensor, chunk: usize) -> Result<Tensor, NnError> {
        self.check_input(batch)?;
        let n = batch.batch();
        let out_len: usize = self.output_shape().iter().product();
        let mut data = Vec::with_capacity(n * out_len);
        let mut start = 0;
        while start < n {
            let end = (start + chunk.max(1)).min(n);
            let mut x = batch.slice_batch(start, end);
            for l in &self.layers {
                x = layer::forward(&l.spec, l.params.as_ref(), &x);
            }
            data.extend_from_slice(x.data());
            start = end;
        }
        let mut shape = vec![n];
        shape.extend_from_slice(self.output_shape());
        Ok(Tensor::new(shape, data)?)
    }

    /// Backpropagates `output_grad` (the loss gradient at the network output)
    /// through all layers.
    pub fn backward(&self, activations: &[Tensor], output_grad: &Tensor) -> Result<Gradients, NnError> {
        self.backward_through(activations, self.layers.len(), output_grad)
    }

    /// Backpropagates through `layers[..upto]`, with `grad` taken with respect
    /// to `activations[upto]`. Used when a loss folds the final layers in
    /// analytically (softmax with cross-entropy).
    pub fn backward_through(
        &self,
        activations: &[Tensor],
        upto: usize,
        grad: &Tensor,
    ) -> Result<Gradients, NnError> {
        if upto > self.layers.len() {
            return Err(NnError::StaleActivations {
                reason: format!("cannot backprop through {upto} of {} layers", self.layers.len()),
            });
        }
        self.check_activations(activations)?;
        if grad.shape() != activations[upto].shape() {
            return Err(NnError::StaleActivations {
                reason: format!(
                    "gradient shape {:?} does not match activation {upto} shape {:?}",
                    grad.shape(),
                    activations[upto].shape()
                ),
            });
        }
        // Earliest trainable layer; nothing below it needs an input gradient.
        let first_trainable = self.layers[..upto]
            .iter()
            .position(|l| l.params.is_some() && !l.frozen);
        let mut grads = Gradients::new();
        let Some(first_trainable) = first_trainable else {
            return Ok(grads);
        };
        let mut g = grad.clone();
        for i in (first_trainable..upto).rev() {
            let l = &self.layers[i];
            let trainable = l.params.is_some() && !l.frozen;
            let need_input = i > first_trainable;
            let (gi, gp) = layer::backward(
                &l.spec,
                l.params.as_ref(),
                &activations[i],
                &activations[i + 1],
                &g,
                need_input,
                trainable,
            );
            if let Some(gp) = gp {
                grads.insert(i, gp);
            }
            match gi {
                Some(gi) => g = gi,
                None => break,
            }
        }
        Ok(grads)
    }

    fn check_activations(&self, activations: &[Tensor]) -> Result<(), NnError> {
        if activations.len() != self.layers.len() + 1 {
            return Err(NnError::StaleActivations {
                reason: format!(
                    "expected {} activations, got {}",
                    self.layers.len() + 1,
                    activations.len()
                ),
            });
        }
        let batch = activations[0].batch();
        for (i, (a, s)) in activations.iter().zip(&self.shapes).enumerate() {
            if a.batch() != batch || a.sample_shape() != s.as_slice() {
                return Err(NnError::StaleActivations {
                    reason: format!(
                        "activation {i} has shape {:?}, network expects [{batch}, {s:?}]",
                        a.shape()
                    ),
                });
            }
        }
        Ok(())
    }

    /// `param <- param - lr * grad` for every non-frozen layer in `grads`.
    /// Nothing is modified if any gradient is non-finite or targets a frozen
    /// layer.
    pub fn sgd_step(&mut self, grads: &Gradients, learning_rate: f64) -> Result<(), NnError> {
        for (&i, g) in grads {
            let l = self.layers.get(i).ok_or(NnError::UnknownLayer { layer: i })?;
            if l.frozen {
                return Err(NnError::GradientForFrozenLayer { layer: i });
            }
            let p = l.params.as_ref().ok_or(NnError::UnknownLayer { layer: i })?;
            if p.weight.shape() != g.weight.shape() || p.bias.shape() != g.bias.shape() {
                return Err(NnError::ParamShape {
                    layer: i,
                    expected: p.weight.shape().to_vec(),
                    actual: g.weight.shape().to_vec(),
                });
            }
            if !g.all_finite() {
                return Err(NnError::NonFiniteGradient { layer: i });
            }
        }
        for (&i, g) in grads {
            let p = self.layers[i].params.as_mut().expect("checked above");
            for (w, d) in p.weight.data_mut().iter_mut().zip(g.weight.data()) {
                *w -= learning_rate * d;
            }
            for (b, d) in p.bias.data_mut().iter_mut().zip(g.bias.data()) {
                *b -= learning_rate * d;
            }
        }
        Ok(())
    }

    /// Raw little-endian bytes of every parameter, in layer order.
    pub fn param_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.parameter_count() * 8);
        for p in self.layers.iter().filter_map(|l| l.params.as_ref()) {
            for v in p.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Hex SHA-256 of [`Network::param_bytes`].
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.param_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mlp(seed: u64) -> Network {
        Network::new(
            vec![3],
            vec![
                LayerSpec::Dense { inputs: 3, outputs: 4 },
                LayerSpec::Relu,
                LayerSpec::Dense { inputs: 4, outputs: 2 },
            ],
            WeightInit::He,
            seed,
        )
        .unwrap()
    }

    #[test]
    fn construction_rejects_incompatible_layers() {
        let err = Network::new(
            vec![3],
            vec![
                LayerSpec::Dense { inputs: 3, outputs: 4 },
                LayerSpec::Dense { inputs: 5, outputs: 2 },
            ],
            WeightInit::He,
            0,
        )
        .unwrap_err();
        assert!(matches!(err, NnError::InvalidArchitecture { layer: 1, .. }));
    }

    #[test]
    fn forward_rejects_wrong_input() {
        let net = mlp(0);
        let x = Tensor::zeros(vec![2, 4]);
        assert!(matches!(net.forward(&x), Err(NnError::ShapeMismatch { layer: 0, .. })));
        let acts = net.forward(&Tensor::zeros(vec![2, 3])).unwrap();
        assert_eq!(acts.len(), 4);
        assert_eq!(acts[3].shape(), &[2, 2]);
    }

    #[test]
    fn all_frozen_gives_empty_gradients() {
        let mut net = mlp(1);
        net.set_frozen(true);
        let x = Tensor::new(vec![1, 3], vec![0.1, -0.2, 0.3]).unwrap();
        let acts = net.forward(&x).unwrap();
        let g = net.backward(&acts, &Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap()).unwrap();
        assert!(g.is_empty());
    }

    #[test]
    fn zero_output_grad_gives_zero_gradients() {
        let net = mlp(2);
        let x = Tensor::new(vec![2, 3], vec![0.1, -0.2, 0.3, 1.0, 2.0, -1.0]).unwrap();
        let acts = net.forward(&x).unwrap();
        let g = net.backward(&acts, &Tensor::zeros(vec![2, 2])).unwrap();
        assert_eq!(g.len(), 2);
        assert!(g.values().all(|p| p.values().all(|&v| v == 0.0)));
    }

    #[test]
    fn stale_activations_are_rejected() {
        let net = mlp(3);
        let acts = net.forward(&Tensor::zeros(vec![2, 3])).unwrap();
        let res = net.backward(&acts[..3], &Tensor::zeros(vec![2, 2]));
        assert!(matches!(res, Err(NnError::StaleActivations { .. })));
        let other = Network::new(vec![3], vec![LayerSpec::Dense { inputs: 3, outputs: 2 }], WeightInit::He, 0).unwrap();
        let acts2 = other.forward(&Tensor::zeros(vec![2, 3])).unwrap();
        assert!(net.backward(&acts2, &Tensor::zeros(vec![2, 2])).is_err());
    }

    #[test]
    fn sgd_step_definition() {
        let mut net = Network::new(vec![1], vec![LayerSpec::Dense { inputs: 1, outputs: 1 }], WeightInit::He, 0).unwrap();
        net.layers_mut()[0].params.as_mut().unwrap().weight.data_mut()[0] = 1.0;
        let mut grads = Gradients::new();
        grads.insert(
            0,
            Params {
                weight: Tensor::new(vec![1, 1], vec![0.5]).unwrap(),
                bias: Tensor::new(vec![1], vec![0.0]).unwrap(),
            },
        );
        let before = net.clone();
        net.sgd_step(&grads, 0.0).unwrap();
        assert_eq!(net, before);
        net.sgd_step(&grads, 0.1).unwrap();
        assert_eq!(net.layers()[0].params.as_ref().unwrap().weight.data()[0], 0.95);
    }

    #[test]
    fn sgd_step_rejects_non_finite_and_frozen() {
        let mut net = mlp(4);
        let x = Tensor::new(vec![1, 3], vec![0.1, -0.2, 0.3]).unwrap();
        let acts = net.forward(&x).unwrap();
        let mut grads = net.backward(&acts, &Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap()).unwrap();
        let before = net.clone();
        grads.get_mut(&2).unwrap().bias.data_mut()[0] = f64::NAN;
        assert!(matches!(net.sgd_step(&grads, 0.1), Err(NnError::NonFiniteGradient { layer: 2 })));
        assert_eq!(net, before);
        grads.get_mut(&2).unwrap().bias.data_mut()[0] = 0.0;
        net.layers_mut()[0].frozen = true;
        assert!(matches!(net.sgd_step(&grads, 0.1), Err(NnError::GradientForFrozenLayer { layer: 0 })));
    }

    #[test]
    fn frozen_prefix_is_untouched_by_training() {
        let mut net = mlp(5);
        net.layers_mut()[0].frozen = true;
        let frozen_before = net.layers()[0].clone();
        let x = Tensor::new(vec![2, 3], vec![0.1, -0.2, 0.3, 1.0, 2.0, -1.0]).unwrap();
        for _ in 0..5 {
            let acts = net.forward(&x).unwrap();
            let g = net.backward(&acts, &Tensor::new(vec![2, 2], vec![1.0, -1.0, 0.5, 0.2]).unwrap()).unwrap();
            assert!(!g.contains_key(&0));
            net.sgd_step(&g, 0.1).unwrap();
        }
        assert_eq!(net.layers()[0], frozen_before);
    }

    #[test]
    fn same_seed_same_weights() {
        assert_eq!(mlp(9).param_bytes(), mlp(9).param_bytes());
        assert_ne!(mlp(9).fingerprint(), mlp(10).fingerprint());
    }
}
