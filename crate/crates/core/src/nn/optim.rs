use serde::{Deserialize, Serialize};

use super::layers::Param;
use super::tensor::Scalar;
use crate::codec::{Reader, Writer};
use crate::error::{HarError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    /// L2 penalty added to the gradient.
    Adam,
    /// Weight decay applied to the parameters, scaled by the learning rate.
    Adamw,
}

impl OptimizerKind {
    fn tag(self) -> u8 {
        match self {
            OptimizerKind::Sgd => 0,
            OptimizerKind::Adam => 1,
            OptimizerKind::Adamw => 2,
        }
    }

    fn from_tag(t: u8) -> Result<Self> {
        Ok(match t {
            0 => OptimizerKind::Sgd,
            1 => OptimizerKind::Adam,
            2 => OptimizerKind::Adamw,
            _ => return Err(HarError::Format(format!("unknown optimizer tag {t}"))),
        })
    }
}

/// Optimizer hyperparameters plus per-parameter moment buffers. Moments
/// are held in `f64` regardless of the model precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub weight_decay: f64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, weight_decay: f64, momentum: f64) -> Self {
        Self {
            kind,
            weight_decay,
            momentum,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Apply one update with learning rate `lr` to `params`, which must be
    /// passed in the same order on every call. A non-finite gradient
    /// aborts before anything is modified.
    pub fn step<F: Scalar>(&mut self, params: &mut [&mut Param<F>], lr: f64) -> Result<()> {
        for (i, p) in params.iter().enumerate() {
            if let Some(j) = p.grad.iter().position(|g| !g.is_finite()) {
                return Err(HarError::Numeric(format!(
                    "non-finite gradient in parameter {i} ({}) at index {j}; step aborted",
                    p.name
                )));
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
            if self.kind != OptimizerKind::Sgd {
                self.v = self.m.clone();
            }
        } else if self.m.len() != params.len()
            || self.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.value.len())
        {
            return Err(HarError::Shape(
                "optimizer state does not match the parameter layout".into(),
            ));
        }
        self.step += 1;
        let t = self.step as i32;
        let wd = self.weight_decay;
        match self.kind {
            OptimizerKind::Sgd => {
                let first = self.step == 1;
                for (p, buf) in params.iter_mut().zip(&mut self.m) {
                    for ((w, g), b) in p.value.iter_mut().zip(&p.grad).zip(buf.iter_mut()) {
                        let x = w.f64();
                        let d = g.f64() + wd * x;
                        *b = if first { d } else { self.momentum * *b + d };
                        *w = F::of(x - lr * *b);
                    }
                }
            }
            OptimizerKind::Adam | OptimizerKind::Adamw => {
                let (b1, b2) = (self.beta1, self.beta2);
                let c1 = 1.0 - b1.powi(t);
                let c2 = 1.0 - b2.powi(t);
                let decoupled = self.kind == OptimizerKind::Adamw;
                for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
                    for (((w, g), m), v) in p.value.iter_mut().zip(&p.grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                        let mut x = w.f64();
                        let mut d = g.f64();
                        if decoupled {
                            x *= 1.0 - lr * wd;
                        } else {
                            d += wd * x;
                        }
                        *m = b1 * *m + (1.0 - b1) * d;
                        *v = b2 * *v + (1.0 - b2) * d * d;
                        x -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
                        *w = F::of(x);
                    }
                }
            }
        }
        Ok(())
    }

    pub fn write(&self, w: &mut Writer) {
        w.u8(self.kind.tag());
        for x in [self.weight_decay, self.momentum, self.beta1, self.beta2, self.eps] {
            w.f64(x);
        }
        w.u64(self.step);
        w.usize(self.m.len());
        for m in &self.m {
            w.f64s(m);
        }
        w.usize(self.v.len());
        for v in &self.v {
            w.f64s(v);
        }
    }

    pub fn read(r: &mut Reader<'_>) -> Result<Self> {
        let kind = OptimizerKind::from_tag(r.u8()?)?;
        let mut o = Optimizer::new(kind, r.f64()?, r.f64()?);
        o.beta1 = r.f64()?;
        o.beta2 = r.f64()?;
        o.eps = r.f64()?;
        o.step = r.u64()?;
        let n = r.usize()?;
        o.m = (0..n).map(|_| r.f64s()).collect::<Result<_>>()?;
        let n = r.usize()?;
        o.v = (0..n).map(|_| r.f64s()).collect::<Result<_>>()?;
        Ok(o)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(value: Vec<f64>, grad: Vec<f64>) -> Param<f64> {
        Param {
            name: "weight",
            shape: vec![value.len()],
            value,
            grad,
        }
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam, OptimizerKind::Adamw] {
            let mut p = param(vec![1.0, -2.0, 0.5], vec![0.0; 3]);
            let mut o = Optimizer::new(kind, 0.0, 0.9);
            for _ in 0..3 {
                o.step(&mut [&mut p], 0.1).unwrap();
            }
            assert_eq!(p.value, vec![1.0, -2.0, 0.5], "{kind:?}");
        }
    }

    #[test]
    fn single_adam_step_matches_closed_form() {
        let (lr, g, x) = (1e-3, 0.3, 2.0);
        let mut p = param(vec![x], vec![g]);
        let mut o = Optimizer::new(OptimizerKind::Adam, 0.0, 0.0);
        o.step(&mut [&mut p], lr).unwrap();
        let m = 0.1 * g / (1.0 - 0.9);
        let v = 0.001 * g * g / (1.0 - 0.999);
        let expected = x - lr * m / (v.sqrt() + 1e-8);
        assert!((p.value[0] - expected).abs() < 1e-15);
        // bias correction makes the first step about lr in magnitude
        assert!((x - p.value[0] - lr).abs() < 1e-8);
        assert_eq!(o.steps(), 1);
    }

    #[test]
    fn coupled_and_decoupled_decay() {
        let mut a = param(vec![1.0], vec![0.0]);
        let mut o = Optimizer::new(OptimizerKind::Adamw, 0.5, 0.0);
        o.step(&mut [&mut a], 0.1).unwrap();
        assert!((a.value[0] - 0.95).abs() < 1e-15);

        let mut z = param(vec![1.0], vec![0.0]);
        let mut o = Optimizer::new(OptimizerKind::Adamw, 0.5, 0.0);
        o.step(&mut [&mut z], 0.0).unwrap();
        assert_eq!(z.value[0], 1.0);

        let mut c = param(vec![1.0], vec![0.0]);
        let mut o = Optimizer::new(OptimizerKind::Adam, 0.5, 0.0);
        o.step(&mut [&mut c], 0.1).unwrap();
        assert!((c.value[0] - 0.9).abs() < 1e-6);
    }

    #[test]
    fn sgd_momentum() {
        let mut p = param(vec![0.0], vec![1.0]);
        let mut o = Optimizer::new(OptimizerKind::Sgd, 0.0, 0.9);
        o.step(&mut [&mut p], 0.1).unwrap();
        assert!((p.value[0] + 0.1).abs() < 1e-15);
        o.step(&mut [&mut p], 0.1).unwrap();
        assert!((p.value[0] + 0.1 + 0.19).abs() < 1e-15);
    }

    #[test]
    fn nan_gradient_aborts_without_update() {
        let mut p = param(vec![1.0, 2.0], vec![0.1, f64::NAN]);
        let mut o = Optimizer::new(OptimizerKind::Adamw, 1e-4, 0.0);
        let err = o.step(&mut [&mut p], 1e-3).unwrap_err();
        assert_eq!(err.exit_code(), 4);
        assert_eq!(p.value, vec![1.0, 2.0]);
        assert_eq!(o.steps(), 0);
    }

    #[test]
    fn layout_mismatch_rejected() {
        let mut p = param(vec![1.0, 2.0], vec![0.1, 0.1]);
        let mut o = Optimizer::new(OptimizerKind::Sgd, 0.0, 0.9);
        o.step(&mut [&mut p], 1e-3).unwrap();
        let mut q = param(vec![1.0], vec![0.1]);
        assert!(o.step(&mut [&mut q], 1e-3).is_err());
    }

    #[test]
    fn state_round_trip() {
        let mut p = param(vec![1.0, 2.0], vec![0.1, -0.3]);
        let mut o = Optimizer::new(OptimizerKind::Adam, 1e-5, 0.0);
        o.step(&mut [&mut p], 1e-3).unwrap();
        let mut w = Writer::new();
        o.write(&mut w);
        let bytes = w.into_bytes();
        let back = Optimizer::read(&mut Reader::new(&bytes)).unwrap();
        assert_eq!(back, o);
    }
}
