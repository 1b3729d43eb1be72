use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tensor::{gemm, Scalar, Tensor};
use crate::error::{HarError, Result};
use crate::seed::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// No padding, output length `T - K + 1`.
    Valid,
    /// Output length `T`; `(K - 1) / 2` zeros on the left, the rest on the right.
    Same,
}

/// One layer of a [`super::ModelGraph`]. Convolutions work on `[n, C, T]`
/// activations, dense layers on `[n, features]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        padding: Padding,
    },
    /// Stride-1 transposed convolution, output length `T + K - 1`.
    ConvTranspose1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    },
    Relu,
    Dropout {
        p: f64,
    },
    /// Max over the time axis: `[C, T] -> [C]`.
    GlobalMaxPool,
    Dense {
        inputs: usize,
        outputs: usize,
    },
}

impl LayerSpec {
    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize, padding: Padding) -> Self {
        LayerSpec::Conv1d {
            in_channels,
            out_channels,
            kernel,
            padding,
        }
    }

    pub fn dense(inputs: usize, outputs: usize) -> Self {
        LayerSpec::Dense { inputs, outputs }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::ConvTranspose1d { .. } => "conv_transpose1d",
            LayerSpec::Relu => "relu",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::GlobalMaxPool => "global_max_pool",
            LayerSpec::Dense { .. } => "dense",
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let err = |msg: String| Err(HarError::Shape(format!("{}: {msg}", self.name())));
        match *self {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                padding,
            } => {
                let &[c, t] = input else {
                    return err(format!("expects [channels, time], got {input:?}"));
                };
                if c != in_channels {
                    return err(format!("expects {in_channels} input channels, got {c}"));
                }
                if kernel == 0 || out_channels == 0 {
                    return err("kernel and channel counts must be positive".into());
                }
                match padding {
                    Padding::Valid if t < kernel => {
                        err(format!("input length {t} is shorter than kernel {kernel}"))
                    }
                    Padding::Valid => Ok(vec![out_channels, t - kernel + 1]),
                    Padding::Same => Ok(vec![out_channels, t]),
                }
            }
            LayerSpec::ConvTranspose1d {
                in_channels,
                out_channels,
                kernel,
            } => {
                let &[c, t] = input else {
                    return err(format!("expects [channels, time], got {input:?}"));
                };
                if c != in_channels {
                    return err(format!("expects {in_channels} input channels, got {c}"));
                }
                if kernel == 0 || out_channels == 0 {
                    return err("kernel and channel counts must be positive".into());
                }
                Ok(vec![out_channels, t + kernel - 1])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Dropout { p } => {
                if !(0.0..1.0).contains(&p) {
                    return err(format!("probability must be in [0, 1), got {p}"));
                }
                Ok(input.to_vec())
            }
            LayerSpec::GlobalMaxPool => {
                let &[c, t] = input else {
                    return err(format!("expects [channels, time], got {input:?}"));
                };
                if t == 0 {
                    return err("empty time axis".into());
                }
                Ok(vec![c])
            }
            LayerSpec::Dense { inputs, outputs } => {
                if input != [inputs] {
                    return err(format!("expects [{inputs}], got {input:?}"));
                }
                if outputs == 0 {
                    return err("zero outputs".into());
                }
                Ok(vec![outputs])
            }
        }
    }

    /// `(name, shape, fan_in)` of each trainable tensor.
    pub fn param_shapes(&self) -> Vec<(&'static str, Vec<usize>, usize)> {
        match *self {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![
                ("weight", vec![out_channels, in_channels, kernel], in_channels * kernel),
                ("bias", vec![out_channels], 0),
            ],
            LayerSpec::ConvTranspose1d {
                in_channels,
                out_channels,
                kernel,
            } => vec![
                ("weight", vec![in_channels, out_channels, kernel], out_channels * kernel),
                ("bias", vec![out_channels], 0),
            ],
            LayerSpec::Dense { inputs, outputs } => vec![
                ("weight", vec![outputs, inputs], inputs),
                ("bias", vec![outputs], 0),
            ],
            _ => Vec::new(),
        }
    }
}

/// A trainable tensor and its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<F> {
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub value: Vec<F>,
    pub grad: Vec<F>,
}

impl<F: Scalar> Param<F> {
    fn new(name: &'static str, shape: Vec<usize>, value: Vec<F>) -> Self {
        let n = value.len();
        Self {
            name,
            shape,
            value,
            grad: vec![F::zero(); n],
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Cache<F> {
    Empty,
    Input(Tensor<F>),
    Relu(Vec<bool>),
    Dropout(Vec<F>),
    MaxPool { argmax: Vec<usize>, t: usize },
}

#[derive(Debug, Clone)]
pub(crate) struct Layer<F> {
    pub spec: LayerSpec,
    pub params: Vec<Param<F>>,
    pub cache: Cache<F>,
}

fn im2col<F: Scalar>(
    x: &[F],
    cin: usize,
    tin: usize,
    k: usize,
    left: usize,
    tout: usize,
    col: &mut [F],
) {
    for ci in 0..cin {
        let src = &x[ci * tin..(ci + 1) * tin];
        for kk in 0..k {
            let row = &mut col[(ci * k + kk) * tout..(ci * k + kk + 1) * tout];
            for (t, v) in row.iter_mut().enumerate() {
                let s = t + kk;
                *v = if s >= left && s - left < tin {
                    src[s - left]
                } else {
                    F::zero()
                };
            }
        }
    }
}

fn col2im_add<F: Scalar>(
    col: &[F],
    cin: usize,
    tin: usize,
    k: usize,
    left: usize,
    tout: usize,
    x: &mut [F],
) {
    for ci in 0..cin {
        let dst = &mut x[ci * tin..(ci + 1) * tin];
        for kk in 0..k {
            let row = &col[(ci * k + kk) * tout..(ci * k + kk + 1) * tout];
            for (t, &v) in row.iter().enumerate() {
                let s = t + kk;
                if s >= left && s - left < tin {
                    dst[s - left] += v;
                }
            }
        }
    }
}

impl<F: Scalar> Layer<F> {
    pub fn new(spec: LayerSpec, rng: &mut Rng) -> Self {
        let params = spec
            .param_shapes()
            .into_iter()
            .map(|(name, shape, fan_in)| {
                let n: usize = shape.iter().product();
                let value = if name == "bias" {
                    vec![F::zero(); n]
                } else {
                    // Kaiming-uniform, fan-in mode, ReLU gain
                    let bound = (6.0 / fan_in as f64).sqrt();
                    (0..n)
                        .map(|_| F::of(rng.random_range(-bound..bound)))
                        .collect()
                };
                Param::new(name, shape, value)
            })
            .collect();
        Self {
            spec,
            params,
            cache: Cache::Empty,
        }
    }

    pub fn forward(
        &mut self,
        x: &Tensor<F>,
        out_shape: &[usize],
        training: bool,
        parallel: bool,
        rng: &mut Rng,
    ) -> Result<Tensor<F>> {
        let n = x.batch();
        let mut shape = vec![n];
        shape.extend_from_slice(out_shape);
        let mut y = Tensor::zeros(shape);
        match self.spec {
            LayerSpec::Conv1d {
                in_channels: cin,
                out_channels: cout,
                kernel: k,
                padding,
            } => {
                let tin = x.shape()[2];
                let tout = out_shape[1];
                let left = match padding {
                    Padding::Valid => 0,
                    Padding::Same => (k - 1) / 2,
                };
                let w = &self.params[0].value;
                let b = &self.params[1].value;
                let per_sample = |s: usize, ys: &mut [F], col: &mut Vec<F>| {
                    let xs = &x.data()[s * cin * tin..(s + 1) * cin * tin];
                    im2col(xs, cin, tin, k, left, tout, col);
                    gemm(false, false, cout, tout, cin * k, w, col, F::zero(), ys);
                    for co in 0..cout {
                        for v in &mut ys[co * tout..(co + 1) * tout] {
                            *v += b[co];
                        }
                    }
                };
                // samples are independent, so both paths give identical bits
                if parallel {
                    y.data_mut()
                        .par_chunks_mut(cout * tout)
                        .enumerate()
                        .for_each_init(|| vec![F::zero(); cin * k * tout], |col, (s, ys)| {
                            per_sample(s, ys, col)
                        });
                } else {
                    let mut col = vec![F::zero(); cin * k * tout];
                    for (s, ys) in y.data_mut().chunks_mut(cout * tout).enumerate() {
                        per_sample(s, ys, &mut col);
                    }
                }
                self.cache = Cache::Input(x.clone());
            }
            LayerSpec::ConvTranspose1d {
                in_channels: cin,
                out_channels: cout,
                kernel: k,
            } => {
                let tin = x.shape()[2];
                let tout = out_shape[1];
                let w = &self.params[0].value;
                let b = &self.params[1].value;
                let mut z = vec![F::zero(); cout * k * tin];
                for s in 0..n {
                    let xs = &x.data()[s * cin * tin..(s + 1) * cin * tin];
                    gemm(true, false, cout * k, tin, cin, w, xs, F::zero(), &mut z);
                    let ys = &mut y.data_mut()[s * cout * tout..(s + 1) * cout * tout];
                    col2im_add(&z, cout, tout, k, 0, tin, ys);
                    for co in 0..cout {
                        for v in &mut ys[co * tout..(co + 1) * tout] {
                            *v += b[co];
                        }
                    }
                }
                self.cache = Cache::Input(x.clone());
            }
            LayerSpec::Relu => {
                let mask: Vec<bool> = x.data().iter().map(|&v| v > F::zero()).collect();
                for ((o, &v), &m) in y.data_mut().iter_mut().zip(x.data()).zip(&mask) {
                    *o = if m { v } else { F::zero() };
                }
                self.cache = Cache::Relu(mask);
            }
            LayerSpec::Dropout { p } => {
                if training && p > 0.0 {
                    let keep = F::of(1.0 / (1.0 - p));
                    let scale: Vec<F> = (0..x.len())
                        .map(|_| {
                            if rng.random::<f64>() < p {
                                F::zero()
                            } else {
                                keep
                            }
                        })
                        .collect();
                    for ((o, &v), &s) in y.data_mut().iter_mut().zip(x.data()).zip(&scale) {
                        *o = v * s;
                    }
                    self.cache = Cache::Dropout(scale);
                } else {
                    y.data_mut().copy_from_slice(x.data());
                    self.cache = Cache::Dropout(Vec::new());
                }
            }
            LayerSpec::GlobalMaxPool => {
                let (c, t) = (x.shape()[1], x.shape()[2]);
                let mut argmax = Vec::with_capacity(n * c);
                for (row, out) in x.data().chunks(t).zip(y.data_mut().iter_mut()) {
                    let mut best = 0;
                    for (i, &v) in row.iter().enumerate() {
                        if v > row[best] {
                            best = i;
                        }
                    }
                    *out = row[best];
                    argmax.push(best);
                }
                self.cache = Cache::MaxPool { argmax, t };
            }
            LayerSpec::Dense { inputs, outputs } => {
                let w = &self.params[0].value;
                let b = &self.params[1].value;
                gemm(false, true, n, outputs, inputs, x.data(), w, F::zero(), y.data_mut());
                for row in y.data_mut().chunks_mut(outputs) {
                    for (v, &bb) in row.iter_mut().zip(b) {
                        *v += bb;
                    }
                }
                self.cache = Cache::Input(x.clone());
            }
        }
        Ok(y)
    }

    /// Back-propagate `dy`. Parameter gradients are accumulated when
    /// `param_grads` is set; the input gradient is returned when
    /// `input_grad` is set.
    pub fn backward(
        &mut self,
        dy: &Tensor<F>,
        in_shape: &[usize],
        param_grads: bool,
        input_grad: bool,
    ) -> Result<Option<Tensor<F>>> {
        let n = dy.batch();
        let mut shape = vec![n];
        shape.extend_from_slice(in_shape);
        let missing = || HarError::InvalidArgument("backward called without a preceding forward".into());
        match (&self.spec, &self.cache) {
            (
                &LayerSpec::Conv1d {
                    in_channels: cin,
                    out_channels: cout,
                    kernel: k,
                    padding,
                },
                Cache::Input(x),
            ) => {
                let tin = in_shape[1];
                let tout = dy.shape()[2];
                let left = match padding {
                    Padding::Valid => 0,
                    Padding::Same => (k - 1) / 2,
                };
                let mut dx = input_grad.then(|| Tensor::zeros(shape));
                let mut col = vec![F::zero(); cin * k * tout];
                let (wp, bp) = self.params.split_at_mut(1);
                let (w, b) = (&mut wp[0], &mut bp[0]);
                for s in 0..n {
                    let dys = &dy.data()[s * cout * tout..(s + 1) * cout * tout];
                    if param_grads {
                        let xs = &x.data()[s * cin * tin..(s + 1) * cin * tin];
                        im2col(xs, cin, tin, k, left, tout, &mut col);
                        gemm(false, true, cout, cin * k, tout, dys, &col, F::one(), &mut w.grad);
                        for co in 0..cout {
                            b.grad[co] += dys[co * tout..(co + 1) * tout].iter().copied().sum();
                        }
                    }
                    if let Some(dx) = dx.as_mut() {
                        gemm(true, false, cin * k, tout, cout, &w.value, dys, F::zero(), &mut col);
                        let dxs = &mut dx.data_mut()[s * cin * tin..(s + 1) * cin * tin];
                        col2im_add(&col, cin, tin, k, left, tout, dxs);
                    }
                }
                Ok(dx)
            }
            (
                &LayerSpec::ConvTranspose1d {
                    in_channels: cin,
                    out_channels: cout,
                    kernel: k,
                },
                Cache::Input(x),
            ) => {
                let tin = in_shape[1];
                let tout = dy.shape()[2];
                let mut dx = input_grad.then(|| Tensor::zeros(shape));
                let mut dz = vec![F::zero(); cout * k * tin];
                let (wp, bp) = self.params.split_at_mut(1);
                let (w, b) = (&mut wp[0], &mut bp[0]);
                for s in 0..n {
                    let dys = &dy.data()[s * cout * tout..(s + 1) * cout * tout];
                    im2col(dys, cout, tout, k, 0, tin, &mut dz);
                    if param_grads {
                        let xs = &x.data()[s * cin * tin..(s + 1) * cin * tin];
                        gemm(false, true, cin, cout * k, tin, xs, &dz, F::one(), &mut w.grad);
                        for co in 0..cout {
                            b.grad[co] += dys[co * tout..(co + 1) * tout].iter().copied().sum();
                        }
                    }
                    if let Some(dx) = dx.as_mut() {
                        let dxs = &mut dx.data_mut()[s * cin * tin..(s + 1) * cin * tin];
                        gemm(false, false, cin, tin, cout * k, &w.value, &dz, F::zero(), dxs);
                    }
                }
                Ok(dx)
            }
            (LayerSpec::Relu, Cache::Relu(mask)) => Ok(input_grad.then(|| {
                let data = dy
                    .data()
                    .iter()
                    .zip(mask)
                    .map(|(&g, &m)| if m { g } else { F::zero() })
                    .collect();
                Tensor::new(shape, data).unwrap()
            })),
            (LayerSpec::Dropout { .. }, Cache::Dropout(scale)) => Ok(input_grad.then(|| {
                let data = if scale.is_empty() {
                    dy.data().to_vec()
                } else {
                    dy.data().iter().zip(scale).map(|(&g, &s)| g * s).collect()
                };
                Tensor::new(shape, data).unwrap()
            })),
            (LayerSpec::GlobalMaxPool, Cache::MaxPool { argmax, t }) => Ok(input_grad.then(|| {
                let mut dx = Tensor::zeros(shape);
                for (row, (&a, &g)) in argmax.iter().zip(dy.data()).enumerate() {
                    dx.data_mut()[row * t + a] += g;
                }
                dx
            })),
            (&LayerSpec::Dense { inputs, outputs }, Cache::Input(x)) => {
                if param_grads {
                    let (wp, bp) = self.params.split_at_mut(1);
                    gemm(true, false, outputs, inputs, n, dy.data(), x.data(), F::one(), &mut wp[0].grad);
                    for row in dy.data().chunks(outputs) {
                        for (g, &v) in bp[0].grad.iter_mut().zip(row) {
                            *g += v;
                        }
                    }
                }
                Ok(input_grad.then(|| {
                    let mut dx = Tensor::zeros(shape);
                    gemm(false, false, n, inputs, outputs, dy.data(), &self.params[0].value, F::zero(), dx.data_mut());
                    dx
                }))
            }
            _ => Err(missing()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use proptest::prelude::*;

    /// Naive sliding dot product for a single sample.
    fn naive_conv(x: &[f64], cin: usize, tin: usize, w: &[f64], cout: usize, k: usize, left: usize, tout: usize) -> Vec<f64> {
        let mut y = vec![0.0; cout * tout];
        for co in 0..cout {
            for t in 0..tout {
                let mut acc = 0.0;
                for ci in 0..cin {
                    for kk in 0..k {
                        let s = t as isize + kk as isize - left as isize;
                        if s >= 0 && (s as usize) < tin {
                            acc += w[(co * cin + ci) * k + kk] * x[ci * tin + s as usize];
                        }
                    }
                }
                y[co * tout + t] = acc;
            }
        }
        y
    }

    proptest! {
        #[test]
        fn conv_matches_naive_sliding_dot(cin in 1usize..4, cout in 1usize..4, k in 1usize..7, extra in 0usize..10, same in any::<bool>(), s in any::<u64>()) {
            let tin = k + extra;
            let padding = if same { Padding::Same } else { Padding::Valid };
            let spec = LayerSpec::conv(cin, cout, k, padding);
            let out = spec.output_shape(&[cin, tin]).unwrap();
            let tout = out[1];
            prop_assert_eq!(tout, if same { tin } else { tin - k + 1 });
            let mut rng = seed::rng_from(s);
            let mut layer = Layer::<f64>::new(spec, &mut rng);
            let x: Vec<f64> = (0..cin * tin).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y = layer.forward(&Tensor::new(vec![1, cin, tin], x.clone()).unwrap(), &out, false, false, &mut rng).unwrap();
            let left = if same { (k - 1) / 2 } else { 0 };
            let oracle = naive_conv(&x, cin, tin, &layer.params[0].value, cout, k, left, tout);
            for (a, b) in y.data().iter().zip(&oracle) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transposed_conv_scatters() {
        let spec = LayerSpec::ConvTranspose1d { in_channels: 1, out_channels: 1, kernel: 2 };
        let mut rng = seed::rng_from(0);
        let mut layer = Layer::<f64>::new(spec.clone(), &mut rng);
        layer.params[0].value = vec![1.0, 10.0];
        let out = spec.output_shape(&[1, 3]).unwrap();
        assert_eq!(out, vec![1, 4]);
        let y = layer
            .forward(&Tensor::new(vec![1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap(), &out, false, false, &mut rng)
            .unwrap();
        assert_eq!(y.data(), &[1.0, 12.0, 23.0, 30.0]);
    }

    #[test]
    fn max_pool_of_constant_map() {
        let mut rng = seed::rng_from(0);
        let mut layer = Layer::<f64>::new(LayerSpec::GlobalMaxPool, &mut rng);
        let x = Tensor::new(vec![1, 2, 4], vec![3.0, 3.0, 3.0, 3.0, -1.5, -1.5, -1.5, -1.5]).unwrap();
        let y = layer.forward(&x, &[2], false, false, &mut rng).unwrap();
        assert_eq!(y.data(), &[3.0, -1.5]);
    }

    #[test]
    fn dropout_statistics() {
        let p = 0.3;
        let mut rng = seed::rng_from(4);
        let mut layer = Layer::<f64>::new(LayerSpec::Dropout { p }, &mut rng);
        let n = 20_000;
        let x = Tensor::new(vec![1, n], vec![1.0; n]).unwrap();
        let y = layer.forward(&x, &[n], true, false, &mut rng).unwrap();
        let zeros = y.data().iter().filter(|&&v| v == 0.0).count();
        // binomial: sd = sqrt(n p (1-p)) ~ 65; allow 5 sd
        assert!((zeros as f64 - p * n as f64).abs() < 5.0 * (n as f64 * p * (1.0 - p)).sqrt());
        assert!(y.data().iter().all(|&v| v == 0.0 || (v - 1.0 / (1.0 - p)).abs() < 1e-12));
        let e = layer.forward(&x, &[n], false, false, &mut rng).unwrap();
        assert_eq!(e, x);
    }

    #[test]
    fn backward_without_forward_fails() {
        let mut rng = seed::rng_from(0);
        let mut layer = Layer::<f64>::new(LayerSpec::dense(2, 2), &mut rng);
        let dy = Tensor::zeros(vec![1, 2]);
        assert!(layer.backward(&dy, &[2], true, true).is_err());
    }

    #[test]
    fn shape_validation() {
        assert!(LayerSpec::conv(3, 4, 24, Padding::Valid).output_shape(&[3, 20]).is_err());
        assert!(LayerSpec::conv(3, 4, 5, Padding::Valid).output_shape(&[2, 20]).is_err());
        assert!(LayerSpec::dense(96, 10).output_shape(&[96, 3]).is_err());
        assert!(LayerSpec::Dropout { p: 1.0 }.output_shape(&[3]).is_err());
        assert_eq!(LayerSpec::GlobalMaxPool.output_shape(&[5, 7]).unwrap(), vec![5]);
    }
}
