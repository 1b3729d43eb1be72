use serde::{Deserialize, Serialize};

use crate::error::{HarError, Result};
use crate::nn::{LayerSpec, Padding};

/// Convolutional encoder: one `conv -> ReLU -> dropout` block per filter
/// count, no pooling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub filters: Vec<usize>,
    pub kernels: Vec<usize>,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            filters: vec![32, 64, 96],
            kernels: vec![24, 16, 8],
            dropout: 0.1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.filters.is_empty() {
            errs.push("filters: at least one block is required".to_string());
        }
        if self.filters.len() != self.kernels.len() {
            errs.push(format!(
                "kernels: expected {} entries to match filters, got {}",
                self.filters.len(),
                self.kernels.len()
            ));
        }
        if self.filters.iter().chain(&self.kernels).any(|&v| v == 0) {
            errs.push("filters/kernels: entries must be positive".to_string());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            errs.push(format!("dropout: must be in [0, 1), got {}", self.dropout));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(HarError::Config(errs))
        }
    }

    pub fn embed_dim(&self) -> usize {
        *self.filters.last().unwrap_or(&0)
    }

    /// Shortest window the valid-padding stack accepts.
    pub fn min_window(&self) -> usize {
        self.kernels.iter().map(|k| k - 1).sum::<usize>() + 1
    }

    pub fn specs(&self, in_channels: usize, padding: Padding) -> Vec<LayerSpec> {
        let mut out = Vec::new();
        let mut c = in_channels;
        for (&f, &k) in self.filters.iter().zip(&self.kernels) {
            out.push(LayerSpec::conv(c, f, k, padding));
            out.push(LayerSpec::Relu);
            out.push(LayerSpec::Dropout { p: self.dropout });
            c = f;
        }
        out
    }

    /// Transposed-convolution mirror of the valid-padding encoder, mapping
    /// the embedding back to `out_channels x T`.
    pub fn decoder_specs(&self, out_channels: usize) -> Vec<LayerSpec> {
        let mut out = Vec::new();
        let n = self.filters.len();
        for i in (0..n).rev() {
            let cin = self.filters[i];
            let cout = if i == 0 { out_channels } else { self.filters[i - 1] };
            out.push(LayerSpec::ConvTranspose1d {
                in_channels: cin,
                out_channels: cout,
                kernel: self.kernels[i],
            });
            if i > 0 {
                out.push(LayerSpec::Relu);
            }
        }
        out
    }
}

/// Global max pool followed by dense layers of the given widths, ReLU
/// between them.
pub fn mlp_head(embed_dim: usize, widths: &[usize]) -> Vec<LayerSpec> {
    let mut out = vec![LayerSpec::GlobalMaxPool];
    let mut prev = embed_dim;
    for (i, &w) in widths.iter().enumerate() {
        if i > 0 {
            out.push(LayerSpec::Relu);
        }
        out.push(LayerSpec::dense(prev, w));
        prev = w;
    }
    out
}

pub fn classifier_head(embed_dim: usize, hidden: usize, n_classes: usize) -> Vec<LayerSpec> {
    mlp_head(embed_dim, &[hidden, n_classes])
}

pub fn projection_head(embed_dim: usize, widths: &[usize]) -> Vec<LayerSpec> {
    mlp_head(embed_dim, widths)
}

/// One binary discriminator for the multi-task pretext.
pub fn discriminator_head(embed_dim: usize, hidden: usize) -> Vec<LayerSpec> {
    mlp_head(embed_dim, &[hidden, 1])
}

/// Pointwise map from the same-padding embedding back to the input channels.
pub fn reconstruction_head(embed_dim: usize, out_channels: usize) -> Vec<LayerSpec> {
    vec![LayerSpec::conv(embed_dim, out_channels, 1, Padding::Same)]
}
