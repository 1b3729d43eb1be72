//! Central-difference verification of analytic gradients.

use std::fmt;

use rand::Rng as _;

use super::graph::ModelGraph;
use super::layers::Param;
use super::tensor::Tensor;
use crate::error::Result;
use crate::seed;

/// A scalar objective of some parameters, evaluated in 64-bit.
pub trait Differentiable {
    fn params_mut(&mut self) -> Vec<&mut Param<f64>>;
    fn param_names(&self) -> Vec<String>;
    /// Objective value at the current parameters.
    fn loss(&mut self) -> Result<f64>;
    /// Objective value; also overwrites every parameter's `grad`.
    fn loss_and_grad(&mut self) -> Result<f64>;
    /// Identifies the piecewise-linear region of the last evaluation.
    fn signature(&self) -> Vec<u32> {
        Vec::new()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    /// Entries whose perturbation crossed a ReLU or max-pool kink.
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn checked(&self) -> usize {
        self.params.iter().map(|p| p.checked).sum()
    }

    pub fn passed(&self) -> bool {
        self.checked() > 0 && self.max_rel_error() < self.tolerance
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.params {
            writeln!(
                f,
                "{:<20} max_rel_err={:.3e} checked={} skipped={}",
                p.name, p.max_rel_error, p.checked, p.skipped
            )?;
        }
        write!(
            f,
            "{} (tolerance {:.0e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.tolerance
        )
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Upper bound on entries probed per parameter tensor (evenly strided).
    pub max_entries: usize,
    /// Gradients smaller than this are compared absolutely.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            max_entries: usize::MAX,
            floor: 1e-6,
        }
    }
}

fn rel_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn grad_check(obj: &mut dyn Differentiable, opts: GradCheckOptions) -> Result<GradCheckReport> {
    obj.loss_and_grad()?;
    let base_sig = obj.signature();
    let names = obj.param_names();
    let analytic: Vec<Vec<f64>> = obj.params_mut().iter().map(|p| p.grad.clone()).collect();
    let mut params = Vec::with_capacity(names.len());
    for (pi, name) in names.into_iter().enumerate() {
        let len = analytic[pi].len();
        let stride = len.div_ceil(opts.max_entries.max(1)).max(1);
        let mut check = ParamCheck {
            name,
            max_rel_error: 0.0,
            checked: 0,
            skipped: 0,
        };
        for j in (0..len).step_by(stride) {
            let orig = obj.params_mut()[pi].value[j];
            obj.params_mut()[pi].value[j] = orig + opts.step;
            let lp = obj.loss()?;
            let sig_p = obj.signature();
            obj.params_mut()[pi].value[j] = orig - opts.step;
            let lm = obj.loss()?;
            let sig_m = obj.signature();
            obj.params_mut()[pi].value[j] = orig;
            if sig_p != base_sig || sig_m != base_sig {
                check.skipped += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * opts.step);
            check.max_rel_error = check.max_rel_error.max(rel_error(analytic[pi][j], numeric, opts.floor));
            check.checked += 1;
        }
        params.push(check);
    }
    Ok(GradCheckReport {
        tolerance: opts.tolerance,
        params,
    })
}

/// A graph and a fixed input under the objective `sum(r ⊙ f(x))` with a
/// fixed random projection `r`. Dropout masks are replayed identically on
/// every evaluation.
pub struct GraphProbe {
    pub graph: ModelGraph<f64>,
    pub input: Tensor<f64>,
    weights: Vec<f64>,
    dropout_seed: u64,
}

impl GraphProbe {
    pub fn new(graph: ModelGraph<f64>, input: Tensor<f64>, seed: u64) -> Self {
        let mut rng = seed::substream(seed, "gradcheck", 0);
        let n: usize = input.batch() * graph.output_shape().iter().product::<usize>();
        let weights = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        Self {
            graph,
            input,
            weights,
            dropout_seed: seed,
        }
    }

    fn run(&mut self) -> Result<Tensor<f64>> {
        self.graph
            .reseed_dropout(seed::substream(self.dropout_seed, "dropout", 0));
        self.graph.forward(&self.input)
    }
}

impl Differentiable for GraphProbe {
    fn params_mut(&mut self) -> Vec<&mut Param<f64>> {
        self.graph.params_mut().collect()
    }

    fn param_names(&self) -> Vec<String> {
        self.graph.param_names()
    }

    fn loss(&mut self) -> Result<f64> {
        let y = self.run()?;
        Ok(y.data().iter().zip(&self.weights).map(|(a, b)| a * b).sum())
    }

    fn loss_and_grad(&mut self) -> Result<f64> {
        let l = self.loss()?;
        let shape = [&[self.input.batch()][..], self.graph.output_shape()].concat();
        self.graph.zero_grad();
        self.graph.backward(&Tensor::new(shape, self.weights.clone())?, false)?;
        Ok(l)
    }

    fn signature(&self) -> Vec<u32> {
        self.graph.activation_signature()
    }
}
