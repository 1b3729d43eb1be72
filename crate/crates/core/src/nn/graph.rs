use super::layers::{Cache, Layer, LayerSpec, Param};
use super::tensor::{Scalar, Tensor};
use crate::error::{HarError, Result};
use crate::seed::{self, Rng};

/// Ordered layer stack with parameters, gradient buffers and a train/eval
/// mode flag. Shapes are checked once, at construction.
#[derive(Debug, Clone)]
pub struct ModelGraph<F> {
    layers: Vec<Layer<F>>,
    /// `shapes[i]` is the per-sample input shape of layer `i`; the last
    /// entry is the output shape.
    shapes: Vec<Vec<usize>>,
    training: bool,
    frozen: bool,
    parallel: bool,
    forwarded: bool,
    dropout_rng: Rng,
}

impl<F: Scalar> ModelGraph<F> {
    pub fn new(specs: &[LayerSpec], input_shape: &[usize], init: &mut Rng) -> Result<Self> {
        let mut shapes = vec![input_shape.to_vec()];
        for (i, spec) in specs.iter().enumerate() {
            let out = spec
                .output_shape(shapes.last().unwrap())
                .map_err(|e| HarError::Shape(format!("layer {i}: {e}")))?;
            shapes.push(out);
        }
        let layers = specs.iter().map(|s| Layer::new(s.clone(), init)).collect();
        Ok(Self {
            layers,
            shapes,
            training: true,
            frozen: false,
            parallel: false,
            forwarded: false,
            dropout_rng: seed::rng_from(0),
        })
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec.clone()).collect()
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.shapes[0]
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().unwrap()
    }

    pub fn set_training(&mut self, training: bool) {
        self.training = training;
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    /// A frozen graph still propagates input gradients but never
    /// accumulates parameter gradients.
    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Run convolutions across the batch on the rayon pool.
    pub fn set_parallel(&mut self, parallel: bool) {
        self.parallel = parallel;
    }

    pub fn reseed_dropout(&mut self, rng: Rng) {
        self.dropout_rng = rng;
    }

    pub fn forward(&mut self, x: &Tensor<F>) -> Result<Tensor<F>> {
        if x.shape().len() != self.shapes[0].len() + 1 || x.shape()[1..] != self.shapes[0][..] {
            return Err(HarError::Shape(format!(
                "model expects [n, {:?}], got {:?}",
                self.shapes[0],
                x.shape()
            )));
        }
        let mut h = x.clone();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            h = layer.forward(&h, &self.shapes[i + 1], self.training, self.parallel, &mut self.dropout_rng)?;
        }
        self.forwarded = true;
        Ok(h)
    }

    /// Back-propagate `dy` from the output. Parameter gradients accumulate
    /// into the buffers (call [`Self::zero_grad`] between steps).
    pub fn backward(&mut self, dy: &Tensor<F>, need_input_grad: bool) -> Result<Option<Tensor<F>>> {
        if !self.forwarded {
            return Err(HarError::InvalidArgument(
                "backward called without a preceding forward".into(),
            ));
        }
        let out = self.output_shape();
        if dy.shape().len() != out.len() + 1 || dy.shape()[1..] != out[..] {
            return Err(HarError::Shape(format!(
                "output gradient should be [n, {out:?}], got {:?}",
                dy.shape()
            )));
        }
        if self.frozen && !need_input_grad {
            return Ok(None);
        }
        let mut g = dy.clone();
        for i in (0..self.layers.len()).rev() {
            let want_input = i > 0 || need_input_grad;
            match self.layers[i].backward(&g, &self.shapes[i], !self.frozen, want_input)? {
                Some(next) => g = next,
                None => return Ok(None),
            }
        }
        Ok(need_input_grad.then_some(g))
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.grad.iter_mut().for_each(|g| *g = F::zero());
        }
    }

    pub fn params(&self) -> impl Iterator<Item = &Param<F>> {
        self.layers.iter().flat_map(|l| l.params.iter())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Param<F>> {
        self.layers.iter_mut().flat_map(|l| l.params.iter_mut())
    }

    /// `layer<i>.<name>` for each parameter tensor.
    pub fn param_names(&self) -> Vec<String> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.params.iter().map(move |p| format!("layer{i}.{}", p.name)))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().map(|p| p.value.len()).sum()
    }

    pub fn export_params(&self) -> Vec<Vec<f64>> {
        self.params().map(|p| p.value.iter().map(|v| v.f64()).collect()).collect()
    }

    pub fn import_params(&mut self, values: &[Vec<f64>]) -> Result<()> {
        let sizes: Vec<usize> = self.params().map(|p| p.value.len()).collect();
        if values.len() != sizes.len() || values.iter().zip(&sizes).any(|(v, &n)| v.len() != n) {
            return Err(HarError::Shape(
                "parameter tensors do not match the model layout".into(),
            ));
        }
        for (p, v) in self.params_mut().zip(values) {
            for (dst, &src) in p.value.iter_mut().zip(v) {
                *dst = F::of(src);
            }
        }
        Ok(())
    }

    /// The same graph with a different element type. Mode flags carry
    /// over; activation caches are dropped.
    pub fn cast<G: Scalar>(&self) -> ModelGraph<G> {
        let layers = self
            .layers
            .iter()
            .map(|l| Layer {
                spec: l.spec.clone(),
                params: l
                    .params
                    .iter()
                    .map(|p| Param {
                        name: p.name,
                        shape: p.shape.clone(),
                        value: p.value.iter().map(|v| G::of(v.f64())).collect(),
                        grad: p.grad.iter().map(|v| G::of(v.f64())).collect(),
                    })
                    .collect(),
                cache: Cache::Empty,
            })
            .collect();
        ModelGraph {
            layers,
            shapes: self.shapes.clone(),
            training: self.training,
            frozen: self.frozen,
            parallel: self.parallel,
            forwarded: false,
            dropout_rng: self.dropout_rng.clone(),
        }
    }

    /// ReLU masks and max-pool winners of the last forward pass. Two
    /// passes with equal signatures lie on the same linear piece.
    pub fn activation_signature(&self) -> Vec<u32> {
        let mut sig = Vec::new();
        for l in &self.layers {
            match &l.cache {
                Cache::Relu(mask) => sig.extend(mask.iter().map(|&m| m as u32)),
                Cache::MaxPool { argmax, .. } => sig.extend(argmax.iter().map(|&a| a as u32)),
                _ => {}
            }
        }
        sig
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::Padding;
    use rand::Rng as _;

    fn encoder_specs() -> Vec<LayerSpec> {
        vec![
            LayerSpec::conv(3, 4, 5, Padding::Valid),
            LayerSpec::Relu,
            LayerSpec::Dropout { p: 0.1 },
            LayerSpec::conv(4, 6, 3, Padding::Valid),
            LayerSpec::Relu,
            LayerSpec::GlobalMaxPool,
            LayerSpec::dense(6, 2),
        ]
    }

    #[test]
    fn zero_input_gives_zero_embedding() {
        let specs = vec![
            LayerSpec::conv(3, 32, 24, Padding::Valid),
            LayerSpec::Relu,
            LayerSpec::conv(32, 64, 16, Padding::Valid),
            LayerSpec::Relu,
            LayerSpec::conv(64, 96, 8, Padding::Valid),
            LayerSpec::Relu,
            LayerSpec::GlobalMaxPool,
        ];
        let mut g = ModelGraph::<f32>::new(&specs, &[3, 100], &mut seed::rng_from(1)).unwrap();
        let y = g.forward(&Tensor::zeros(vec![2, 3, 100])).unwrap();
        assert_eq!(y.shape(), &[2, 96]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn short_windows_rejected_at_construction() {
        let specs = vec![
            LayerSpec::conv(3, 32, 24, Padding::Valid),
            LayerSpec::conv(32, 64, 16, Padding::Valid),
            LayerSpec::conv(64, 96, 8, Padding::Valid),
        ];
        assert!(ModelGraph::<f32>::new(&specs, &[3, 45], &mut seed::rng_from(1)).is_err());
        assert!(ModelGraph::<f32>::new(&specs, &[3, 46], &mut seed::rng_from(1)).is_ok());
    }

    #[test]
    fn eval_forward_is_bit_identical() {
        let mut rng = seed::rng_from(3);
        let mut g = ModelGraph::<f32>::new(&encoder_specs(), &[3, 20], &mut rng).unwrap();
        g.set_training(false);
        let x = Tensor::new(vec![4, 3, 20], (0..240).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let a = g.forward(&x).unwrap();
        let b = g.forward(&x).unwrap();
        assert_eq!(a, b);
        g.set_parallel(true);
        assert_eq!(g.forward(&x).unwrap(), a);
    }

    #[test]
    fn identity_network_sum_gradient_is_ones() {
        let mut g = ModelGraph::<f64>::new(&[], &[3, 7], &mut seed::rng_from(0)).unwrap();
        let x = Tensor::new(vec![2, 3, 7], vec![0.5; 42]).unwrap();
        let y = g.forward(&x).unwrap();
        let dx = g.backward(&Tensor::new(y.shape().to_vec(), vec![1.0; 42]).unwrap(), true).unwrap().unwrap();
        assert!(dx.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn backward_requires_forward_and_keeps_params() {
        let mut rng = seed::rng_from(5);
        let mut g = ModelGraph::<f64>::new(&encoder_specs(), &[3, 20], &mut rng).unwrap();
        let dy = Tensor::new(vec![1, 2], vec![1.0, -1.0]).unwrap();
        assert!(g.backward(&dy, false).is_err());
        let x = Tensor::new(vec![1, 3, 20], (0..60).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let before = g.export_params();
        g.forward(&x).unwrap();
        g.backward(&dy, false).unwrap();
        let grads1: Vec<Vec<f64>> = g.params().map(|p| p.grad.clone()).collect();
        assert_eq!(g.export_params(), before);
        g.zero_grad();
        g.backward(&dy, false).unwrap();
        let grads2: Vec<Vec<f64>> = g.params().map(|p| p.grad.clone()).collect();
        assert_eq!(grads1, grads2);
        assert!(grads1.iter().flatten().any(|&v| v != 0.0));
    }

    #[test]
    fn frozen_graph_accumulates_nothing() {
        let mut rng = seed::rng_from(6);
        let mut g = ModelGraph::<f64>::new(&encoder_specs(), &[3, 20], &mut rng).unwrap();
        g.set_frozen(true);
        let x = Tensor::new(vec![2, 3, 20], (0..120).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        g.forward(&x).unwrap();
        let dx = g.backward(&Tensor::new(vec![2, 2], vec![1.0; 4]).unwrap(), true).unwrap();
        assert!(dx.is_some());
        assert!(g.params().all(|p| p.grad.iter().all(|&v| v == 0.0)));
    }
}
