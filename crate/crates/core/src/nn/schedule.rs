use serde::{Deserialize, Serialize};

/// Per-epoch learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Multiply by `gamma` every `every` epochs.
    Step { gamma: f64, every: usize },
    /// Half-cosine from the base rate at epoch 0 to zero at `t_max`.
    Cosine { t_max: usize },
}

impl LrSchedule {
    pub fn rate(&self, base: f64, epoch: usize) -> f64 {
        match *self {
            LrSchedule::Constant => base,
            LrSchedule::Step { gamma, every } => base * gamma.powi((epoch / every.max(1)) as i32),
            LrSchedule::Cosine { t_max } => {
                let t = t_max.max(1) as f64;
                base * (1.0 + (std::f64::consts::PI * epoch as f64 / t).cos()) / 2.0
            }
        }
    }
}
