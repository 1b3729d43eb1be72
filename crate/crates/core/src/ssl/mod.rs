//! Self-supervised pretext tasks and the pretrain-then-classify protocol.

pub mod batch;
pub mod classifier;
pub mod losses;
pub mod models;
pub mod pretrain;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::HarError;
use crate::nn::Padding;

pub use batch::{TrainSettings, UnlabeledWindows};
pub use classifier::{evaluate_with_classifier, train_classifier, train_supervised, ClassifierOptions, ClassifierOutcome, LabeledSplits};
pub use losses::{autoencoder_loss, make_mask_plan, masked_reconstruction_loss, nt_xent_loss, MaskAction, MaskPlan};
pub use models::EncoderConfig;
pub use pretrain::{pretrain, PretextConfig, PretrainOptions, PretrainOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PretextTask {
    /// Reconstruct the window through a transposed-convolution decoder.
    Autoencoder,
    /// Reconstruct masked timesteps through a pointwise head.
    Masked,
    /// One binary discriminator per transform kind.
    Multitask,
    /// Contrastive matching of two augmented views.
    Simclr,
}

impl PretextTask {
    pub const ALL: [PretextTask; 4] = [
        PretextTask::Autoencoder,
        PretextTask::Masked,
        PretextTask::Multitask,
        PretextTask::Simclr,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            PretextTask::Autoencoder => "autoencoder",
            PretextTask::Masked => "masked",
            PretextTask::Multitask => "multitask",
            PretextTask::Simclr => "simclr",
        }
    }

    /// The masked task keeps the time axis so its head can reconstruct
    /// every step.
    pub fn encoder_padding(self) -> Padding {
        match self {
            PretextTask::Masked => Padding::Same,
            _ => Padding::Valid,
        }
    }

    pub fn reconstructs(self) -> bool {
        matches!(self, PretextTask::Autoencoder | PretextTask::Masked)
    }
}

impl fmt::Display for PretextTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for PretextTask {
    type Err = HarError;

    fn from_str(s: &str) -> Result<Self, HarError> {
        Self::ALL
            .into_iter()
            .find(|t| t.tag() == s)
            .ok_or_else(|| HarError::InvalidArgument(format!("unknown pretext task '{s}'")))
    }
}
