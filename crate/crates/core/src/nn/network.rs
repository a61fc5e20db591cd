use rand::Rng;

use super::layer::{self, Cache, Ctx, LayerSpec, RunningStats};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::seeds::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics for batch norm; caches kept for [`Network::backward`].
    Train,
    /// Running statistics for batch norm; nothing cached.
    Infer,
}

/// An ordered stack of layers with all parameters in one flat vector.
///
/// Parameters are laid out layer by layer; within a layer the weights come
/// first (row-major, output-major) and the bias or shift after. Batch-norm
/// layers store scale then shift.
#[derive(Debug, Clone)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    shapes: Vec<Vec<usize>>,
    offsets: Vec<usize>,
    params: Vec<f64>,
    running: Vec<Option<RunningStats>>,
    caches: Option<Vec<Cache>>,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.input_shape == other.input_shape
            && self.layers == other.layers
            && self.params == other.params
            && self.running == other.running
    }
}

impl Network {
    /// Checks shape compatibility layer by layer. Parameters start at zero,
    /// batch-norm scales at one; call [`Network::initialize`] before training.
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> Result<Network> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::Shape(format!("invalid input shape {input_shape:?}")));
        }
        let mut shapes = vec![input_shape.clone()];
        let mut offsets = Vec::with_capacity(layers.len() + 1);
        let mut total = 0;
        for (k, spec) in layers.iter().enumerate() {
            let out = spec
                .output_shape(&shapes[k])
                .map_err(|e| Error::Shape(format!("layer {k}: {e}")))?;
            shapes.push(out);
            offsets.push(total);
            total += spec.param_count();
        }
        offsets.push(total);
        let running = layers
            .iter()
            .map(|l| match l {
                LayerSpec::BatchNorm { channels } => Some(RunningStats::new(*channels)),
                _ => None,
            })
            .collect();
        let mut net = Network {
            input_shape,
            layers,
            shapes,
            offsets,
            params: vec![0.0; total],
            running,
            caches: None,
        };
        for k in 0..net.layers.len() {
            if let LayerSpec::BatchNorm { channels } = net.layers[k] {
                let start = net.offsets[k];
                net.params[start..start + channels].fill(1.0);
            }
        }
        Ok(net)
    }

    /// Draws weights: He-uniform when the next layer is a ReLU, Glorot-uniform
    /// otherwise. Biases and shifts start at zero, scales at one.
    pub fn initialize(&mut self, seed: u64) {
        let mut rng = stream_rng(seed, 0);
        for k in 0..self.layers.len() {
            let Some((fan_in, fan_out)) = self.layers[k].fans() else {
                continue;
            };
            let feeds_relu = matches!(self.layers.get(k + 1), Some(LayerSpec::Relu));
            let limit = if feeds_relu {
                (6.0 / fan_in as f64).sqrt()
            } else {
                (6.0 / (fan_in + fan_out) as f64).sqrt()
            };
            let start = self.offsets[k];
            let nw = self.layers[k].weight_count();
            for p in &mut self.params[start..start + nw] {
                *p = rng.gen_range(-limit..limit);
            }
            self.params[start + nw..self.offsets[k + 1]].fill(0.0);
        }
        for stats in self.running.iter_mut().flatten() {
            *stats = RunningStats::new(stats.mean.len());
        }
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().expect("at least the input shape")
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "network has {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    /// Parameter range of layer `k`.
    pub fn layer_params(&self, k: usize) -> std::ops::Range<usize> {
        self.offsets[k]..self.offsets[k + 1]
    }

    /// Running statistics of every batch-norm layer, in layer order.
    pub fn running_stats(&self) -> impl Iterator<Item = &RunningStats> {
        self.running.iter().flatten()
    }

    pub(crate) fn running_stats_mut(&mut self) -> impl Iterator<Item = &mut RunningStats> {
        self.running.iter_mut().flatten()
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.shape().len() != self.input_shape.len() + 1 || input.shape()[1..] != self.input_shape[..] {
            return Err(Error::Shape(format!(
                "network expects [batch, {:?}], got {:?}",
                self.input_shape,
                input.shape()
            )));
        }
        Ok(())
    }

    /// Runs the batch through every layer.
    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        self.check_input(input)?;
        let train = mode == Mode::Train;
        let mut caches = Vec::with_capacity(if train { self.layers.len() } else { 0 });
        let mut x = input.clone();
        for k in 0..self.layers.len() {
            let ctx = Ctx {
                spec: &self.layers[k],
                params: &self.params[self.offsets[k]..self.offsets[k + 1]],
                in_shape: &self.shapes[k],
                out_shape: &self.shapes[k + 1],
            };
            let (y, cache) = layer::forward(&ctx, self.running[k].as_mut(), &x, train);
            if train {
                caches.push(cache);
            }
            x = y;
        }
        self.caches = train.then_some(caches);
        Ok(x)
    }

    /// Inference-mode forward pass that leaves the network untouched.
    pub fn predict(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let mut x = input.clone();
        for k in 0..self.layers.len() {
            let ctx = Ctx {
                spec: &self.layers[k],
                params: &self.params[self.offsets[k]..self.offsets[k + 1]],
                in_shape: &self.shapes[k],
                out_shape: &self.shapes[k + 1],
            };
            // inference never writes to the running statistics
            let mut stats = self.running[k].clone();
            x = layer::forward(&ctx, stats.as_mut(), &x, false).0;
        }
        Ok(x)
    }

    /// Gradient of the loss with respect to every parameter, given the
    /// gradient with respect to the output of the last training-mode forward
    /// pass. Consumes the cached activations.
    pub fn backward(&mut self, loss_grad: &Tensor) -> Result<Vec<f64>> {
        let caches = self
            .caches
            .take()
            .ok_or_else(|| Error::State("backward called without a training-mode forward pass".into()))?;
        let batch = loss_grad.shape().first().copied().unwrap_or(0);
        let mut expected = vec![batch];
        expected.extend_from_slice(self.output_shape());
        if loss_grad.shape() != expected.as_slice() {
            return Err(Error::Shape(format!(
                "loss gradient shape {:?}, expected {expected:?}",
                loss_grad.shape()
            )));
        }
        let mut grads = vec![0.0; self.params.len()];
        let mut dy = loss_grad.clone();
        for (k, cache) in caches.into_iter().enumerate().rev() {
            let ctx = Ctx {
                spec: &self.layers[k],
                params: &self.params[self.offsets[k]..self.offsets[k + 1]],
                in_shape: &self.shapes[k],
                out_shape: &self.shapes[k + 1],
            };
            dy = layer::backward(&ctx, &mut grads[self.offsets[k]..self.offsets[k + 1]], cache, &dy)?;
        }
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn dense_identity_relu() {
        let mut net = Network::new(
            vec![2],
            vec![LayerSpec::Dense { inputs: 2, outputs: 2 }, LayerSpec::Relu],
        )
        .unwrap();
        net.set_params(&[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let y = net.forward(&t(&[1, 2], &[1.0, -2.0]), Mode::Infer).unwrap();
        assert_eq!(y.data(), &[1.0, 0.0]);
    }

    #[test]
    fn sigmoid_of_zero() {
        let net = Network::new(vec![3], vec![LayerSpec::Sigmoid]).unwrap();
        let y = net.predict(&Tensor::zeros(vec![2, 3])).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn maxpool_small() {
        let net = Network::new(vec![1, 2, 2], vec![LayerSpec::MaxPool2x2]).unwrap();
        let y = net.predict(&t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[4.0]);
    }

    #[test]
    fn maxpool_ceil_mode_shape() {
        let net = Network::new(vec![2, 13, 15], vec![LayerSpec::MaxPool2x2]).unwrap();
        assert_eq!(net.output_shape(), &[2, 7, 8]);
    }

    #[test]
    fn pad_then_crop_is_identity() {
        let net = Network::new(
            vec![1, 13, 15],
            vec![
                LayerSpec::Pad { height: 16, width: 16 },
                LayerSpec::Crop { height: 13, width: 15 },
            ],
        )
        .unwrap();
        let x = t(&[1, 1, 13, 15], &(0..195).map(|i| i as f64).collect::<Vec<_>>());
        assert_eq!(net.predict(&x).unwrap(), x);
    }

    #[test]
    fn pad_replicates_edges() {
        let net = Network::new(vec![1, 2, 2], vec![LayerSpec::Pad { height: 3, width: 4 }]).unwrap();
        let y = net.predict(&t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0, 2.0, 2.0, 3.0, 4.0, 4.0, 4.0, 3.0, 4.0, 4.0, 4.0]);
    }

    #[test]
    fn upsample_nearest() {
        let net = Network::new(vec![1, 1, 2], vec![LayerSpec::Upsample2x2]).unwrap();
        let y = net.predict(&t(&[1, 1, 1, 2], &[1.0, 2.0])).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 4]);
        assert_eq!(y.data(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn shape_errors() {
        assert!(Network::new(vec![3], vec![LayerSpec::Dense { inputs: 2, outputs: 2 }]).is_err());
        assert!(Network::new(
            vec![4],
            vec![LayerSpec::Conv3x3 {
                in_channels: 1,
                out_channels: 1
            }]
        )
        .is_err());
        let net = Network::new(vec![2], vec![LayerSpec::Relu]).unwrap();
        assert!(matches!(net.predict(&Tensor::zeros(vec![1, 3])), Err(Error::Shape(_))));
    }

    #[test]
    fn backward_needs_train_forward() {
        let mut net = Network::new(vec![2], vec![LayerSpec::Dense { inputs: 2, outputs: 1 }]).unwrap();
        assert!(matches!(net.backward(&Tensor::zeros(vec![1, 1])), Err(Error::State(_))));
        net.forward(&Tensor::zeros(vec![1, 2]), Mode::Infer).unwrap();
        assert!(matches!(net.backward(&Tensor::zeros(vec![1, 1])), Err(Error::State(_))));
    }

    #[test]
    fn zero_loss_gradient_gives_zero_gradients() {
        let mut net = Network::new(
            vec![1, 4, 4],
            vec![
                LayerSpec::Conv3x3 {
                    in_channels: 1,
                    out_channels: 2,
                },
                LayerSpec::Relu,
                LayerSpec::BatchNorm { channels: 2 },
            ],
        )
        .unwrap();
        net.initialize(3);
        let x = t(
            &[2, 1, 4, 4],
            &(0..32).map(|i| (i as f64 * 0.37).sin()).collect::<Vec<_>>(),
        );
        net.forward(&x, Mode::Train).unwrap();
        let g = net.backward(&Tensor::zeros(vec![2, 2, 4, 4])).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dense_weight_gradient_is_outer_product() {
        // y = W x + b, L = sum(dy * y) so dL/dW = outer(dy, x)
        let mut net = Network::new(vec![2], vec![LayerSpec::Dense { inputs: 2, outputs: 2 }]).unwrap();
        net.set_params(&[0.5, -1.0, 2.0, 0.25, 0.1, -0.2]).unwrap();
        net.forward(&t(&[1, 2], &[3.0, -4.0]), Mode::Train).unwrap();
        let g = net.backward(&t(&[1, 2], &[0.7, -1.1])).unwrap();
        let expected = [0.7 * 3.0, 0.7 * -4.0, -1.1 * 3.0, -1.1 * -4.0, 0.7, -1.1];
        for (a, e) in g.iter().zip(expected) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn batchnorm_normalises_in_train_mode() {
        let mut net = Network::new(vec![3], vec![LayerSpec::BatchNorm { channels: 3 }]).unwrap();
        let data: Vec<f64> = (0..24).map(|i| 50.0 + 30.0 * ((i * 7 % 11) as f64 - 5.0)).collect();
        let y = net.forward(&t(&[8, 3], &data), Mode::Train).unwrap();
        for c in 0..3 {
            let col: Vec<f64> = y.data().iter().skip(c).step_by(3).copied().collect();
            let mean = col.iter().sum::<f64>() / 8.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
            assert!(mean.abs() <= 1e-9);
            assert!((var - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn running_stats_converge_on_constant_batches() {
        let mut net = Network::new(vec![2, 1, 2], vec![LayerSpec::BatchNorm { channels: 2 }]).unwrap();
        let x = t(&[2, 2, 1, 2], &[1.0, 3.0, -2.0, 6.0, 1.0, 3.0, -2.0, 6.0]);
        for _ in 0..3000 {
            net.forward(&x, Mode::Train).unwrap();
        }
        let stats = net.running_stats().next().unwrap();
        assert!((stats.mean[0] - 2.0).abs() < 1e-9);
        assert!((stats.mean[1] - 2.0).abs() < 1e-9);
        assert!((stats.var[0] - 1.0).abs() < 1e-9);
        assert!((stats.var[1] - 16.0).abs() < 1e-9);
    }

    #[test]
    fn initialization_is_seeded() {
        let specs = vec![
            LayerSpec::Dense { inputs: 4, outputs: 6 },
            LayerSpec::Relu,
            LayerSpec::Dense { inputs: 6, outputs: 4 },
            LayerSpec::Sigmoid,
        ];
        let mut a = Network::new(vec![4], specs.clone()).unwrap();
        let mut b = Network::new(vec![4], specs).unwrap();
        a.initialize(42);
        b.initialize(42);
        assert_eq!(a.params(), b.params());
        let he = (6.0f64 / 4.0).sqrt();
        let glorot = (6.0f64 / 10.0).sqrt();
        assert!(a.params()[a.layer_params(0)][..24].iter().all(|w| w.abs() < he));
        assert!(a.params()[a.layer_params(2)][..24].iter().all(|w| w.abs() < glorot));
        b.initialize(43);
        assert_ne!(a.params(), b.params());
    }
}
