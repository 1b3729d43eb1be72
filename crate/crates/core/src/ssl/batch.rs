use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{HarError, Result};
use crate::nn::{tensor::windows_to_tensor, LrSchedule, Optimizer, OptimizerKind, Scalar, Tensor};
use crate::seed;
use crate::windowing::WindowBatch;

/// Optimizer, schedule and batching of one training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Only used by `sgd`.
    pub momentum: f64,
    pub schedule: LrSchedule,
}

impl TrainSettings {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.epochs == 0 {
            errs.push("epochs: must be at least 1".to_string());
        }
        if self.batch_size == 0 {
            errs.push("batch_size: must be at least 1".to_string());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            errs.push(format!("learning_rate: must be a non-negative number, got {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            errs.push(format!("weight_decay: must be a non-negative number, got {}", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            errs.push(format!("momentum: must be in [0, 1), got {}", self.momentum));
        }
        match self.schedule {
            LrSchedule::Step { gamma, every } if !(gamma > 0.0) || every == 0 => {
                errs.push("schedule: step needs gamma > 0 and every >= 1".to_string())
            }
            LrSchedule::Cosine { t_max: 0 } => errs.push("schedule: cosine needs t_max >= 1".to_string()),
            _ => {}
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(HarError::Config(errs))
        }
    }

    pub fn optimizer(&self) -> Optimizer {
        Optimizer::new(self.optimizer, self.weight_decay, self.momentum)
    }

    pub fn rate(&self, epoch: usize) -> f64 {
        self.schedule.rate(self.learning_rate, epoch)
    }
}

/// Shuffled mini-batches of `0..n` for one epoch; the last one may be short.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::substream(seed, "shuffle", epoch as u64));
    idx.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
}

/// Rows `idx` of the batch dimension.
pub fn gather<F: Scalar>(t: &Tensor<F>, idx: &[usize]) -> Tensor<F> {
    let inner: usize = t.shape()[1..].iter().product();
    let mut data = Vec::with_capacity(idx.len() * inner);
    for &i in idx {
        data.extend_from_slice(&t.data()[i * inner..(i + 1) * inner]);
    }
    let mut shape = t.shape().to_vec();
    shape[0] = idx.len();
    Tensor::new(shape, data).expect("gathered rows match shape")
}

/// Windows without labels, row-major `[n][T][C]`. Pretext training only
/// ever sees this type.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledWindows {
    pub data: Vec<f64>,
    pub n: usize,
    pub timesteps: usize,
    pub channels: usize,
}

impl UnlabeledWindows {
    pub fn from_batch(b: &WindowBatch) -> Self {
        Self {
            data: b.data.clone(),
            n: b.len(),
            timesteps: b.win_len,
            channels: b.channels,
        }
    }

    pub fn window(&self, i: usize) -> &[f64] {
        let w = self.timesteps * self.channels;
        &self.data[i * w..(i + 1) * w]
    }

    /// Row-major copy of the selected windows.
    pub fn select(&self, idx: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(idx.len() * self.timesteps * self.channels);
        for &i in idx {
            out.extend_from_slice(self.window(i));
        }
        out
    }

    pub fn to_tensor<F: Scalar>(&self) -> Result<Tensor<F>> {
        windows_to_tensor(&self.data, self.n, self.timesteps, self.channels)
    }
}

/// Labeled windows converted once to the engine layout.
#[derive(Debug, Clone)]
pub struct LabeledTensor<F> {
    pub x: Tensor<F>,
    pub y: Vec<usize>,
}

impl<F: Scalar> LabeledTensor<F> {
    pub fn from_batch(b: &WindowBatch) -> Result<Self> {
        Ok(Self {
            x: windows_to_tensor(&b.data, b.len(), b.win_len, b.channels)?,
            y: b.labels.iter().map(|&l| l as usize).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}
