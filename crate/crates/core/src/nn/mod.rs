//! Minimal neural-network engine: 1-D convolutions, dense layers, ReLU,
//! dropout and global max pooling with hand-written backward rules, plus
//! optimizers, learning-rate schedules, gradient checking and checkpoints.
//!
//! Activations are `[n, channels, time]` for convolutional layers and
//! `[n, features]` for dense ones.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod schedule;
pub mod tensor;

pub use checkpoint::{Checkpoint, GraphState};
pub use graph::ModelGraph;
pub use layers::{LayerSpec, Padding, Param};
pub use optim::{Optimizer, OptimizerKind};
pub use schedule::LrSchedule;
pub use tensor::{Scalar, Tensor};
