//! Hand-crafted per-window features.
//!
//! Two extractors are provided:
//!
//! * **statistical**: per channel the mean, population variance, spectral
//!   energy and spectral entropy, followed by the Pearson correlation of
//!   every channel pair (15 values for three channels).
//! * **ECDF**: per channel the inverse empirical CDF sampled at `q` equally
//!   spaced probabilities `i / (q - 1)` with linear interpolation between
//!   order statistics, followed by the channel mean (`q + 1` values per
//!   channel, 78 for 25 quantiles over three channels).
//!
//! Spectral quantities use the mean-removed channel, zero-padded to the next
//! power of two. With `N` the padded length and `P_k = |X_k|^2`, the energy
//! is the mean of `P_k` over the one-sided bins `k = 1..=N/2` and the entropy
//! is the Shannon entropy (natural log) of `P_k / sum(P)` over the same bins.
//! Degenerate inputs map to 0: the entropy of an all-zero spectrum and the
//! correlation involving a constant channel.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::codec;
use crate::error::{HarError, Result};
use crate::windowing::WindowBatch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureSchema {
    Statistical,
    Ecdf { n_quantiles: usize },
}

impl FeatureSchema {
    pub fn id(&self) -> String {
        match self {
            FeatureSchema::Statistical => "statistical-v1".to_string(),
            FeatureSchema::Ecdf { n_quantiles } => format!("ecdf-q{n_quantiles}-v1"),
        }
    }

    pub fn dim(&self, channels: usize) -> usize {
        match self {
            FeatureSchema::Statistical => 4 * channels + channels * (channels.saturating_sub(1)) / 2,
            FeatureSchema::Ecdf { n_quantiles } => (n_quantiles + 1) * channels,
        }
    }

    pub fn column_names(&self, channels: usize) -> Vec<String> {
        let mut names = Vec::with_capacity(self.dim(channels));
        match self {
            FeatureSchema::Statistical => {
                for c in 0..channels {
                    for stat in ["mean", "var", "energy", "entropy"] {
                        names.push(format!("ch{c}_{stat}"));
                    }
                }
                for a in 0..channels {
                    for b in a + 1..channels {
                        names.push(format!("corr_{a}_{b}"));
                    }
                }
            }
            FeatureSchema::Ecdf { n_quantiles } => {
                for c in 0..channels {
                    for q in 0..*n_quantiles {
                        names.push(format!("ch{c}_q{q:02}"));
                    }
                    names.push(format!("ch{c}_mean"));
                }
            }
        }
        names
    }

    pub fn extract(&self, window: &[f64], channels: usize) -> Result<Vec<f64>> {
        match self {
            FeatureSchema::Statistical => statistical_features(window, channels),
            FeatureSchema::Ecdf { n_quantiles } => ecdf_features(window, channels, *n_quantiles),
        }
    }
}

fn channel(window: &[f64], channels: usize, c: usize) -> Vec<f64> {
    window.iter().skip(c).step_by(channels).copied().collect()
}

fn check_window(window: &[f64], channels: usize, min_len: usize) -> Result<usize> {
    if channels == 0 || !window.len().is_multiple_of(channels) {
        return Err(HarError::Shape(format!(
            "window of {} values is not a multiple of {channels} channels",
            window.len()
        )));
    }
    let t = window.len() / channels;
    if t < min_len {
        return Err(HarError::Shape(format!(
            "window needs at least {min_len} timesteps, has {t}"
        )));
    }
    Ok(t)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn variance(xs: &[f64], mu: f64) -> f64 {
    xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / xs.len() as f64
}

/// One-sided power spectrum `|X_k|^2`, `k = 1..=N/2`, of the mean-removed
/// signal zero-padded to `N = next_power_of_two(len)`.
pub fn one_sided_power(xs: &[f64]) -> Vec<f64> {
    let mu = mean(xs);
    let n = xs.len().next_power_of_two().max(2);
    let mut buf: Vec<Complex<f64>> = xs.iter().map(|&x| Complex::new(x - mu, 0.0)).collect();
    buf.resize(n, Complex::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf[1..=n / 2].iter().map(|z| z.norm_sqr()).collect()
}

pub fn spectral_energy(power: &[f64]) -> f64 {
    power.iter().sum::<f64>() / power.len() as f64
}

pub fn spectral_entropy(power: &[f64]) -> f64 {
    let total: f64 = power.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        return 0.0;
    }
    -power
        .iter()
        .map(|&p| p / total)
        .filter(|&p| p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>()
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (variance(a, ma), variance(b, mb));
    if va <= 0.0 || vb <= 0.0 {
        return 0.0;
    }
    let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / a.len() as f64;
    (cov / (va.sqrt() * vb.sqrt())).clamp(-1.0, 1.0)
}

/// Statistical features of a row-major `[T][channels]` window.
pub fn statistical_features(window: &[f64], channels: usize) -> Result<Vec<f64>> {
    check_window(window, channels, 2)?;
    let cols: Vec<Vec<f64>> = (0..channels).map(|c| channel(window, channels, c)).collect();
    let mut out = Vec::with_capacity(FeatureSchema::Statistical.dim(channels));
    for xs in &cols {
        let mu = mean(xs);
        let power = one_sided_power(xs);
        out.push(mu);
        out.push(variance(xs, mu));
        out.push(spectral_energy(&power));
        out.push(spectral_entropy(&power));
    }
    for a in 0..channels {
        for b in a + 1..channels {
            out.push(pearson(&cols[a], &cols[b]));
        }
    }
    Ok(out)
}

/// Inverse ECDF at probabilities `i / (q - 1)`, linear between order statistics.
pub fn ecdf_quantiles(xs: &[f64], n_quantiles: usize) -> Vec<f64> {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let last = (sorted.len() - 1) as f64;
    (0..n_quantiles)
        .map(|i| {
            let pos = i as f64 / (n_quantiles - 1) as f64 * last;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            let frac = pos - lo as f64;
            sorted[lo] + (sorted[hi] - sorted[lo]) * frac
        })
        .collect()
}

/// ECDF features of a row-major `[T][channels]` window.
pub fn ecdf_features(window: &[f64], channels: usize, n_quantiles: usize) -> Result<Vec<f64>> {
    if n_quantiles < 2 {
        return Err(HarError::InvalidArgument(format!(
            "ECDF needs at least 2 quantiles, got {n_quantiles}"
        )));
    }
    check_window(window, channels, 1)?;
    let mut out = Vec::with_capacity((n_quantiles + 1) * channels);
    for c in 0..channels {
        let xs = channel(window, channels, c);
        out.extend(ecdf_quantiles(&xs, n_quantiles));
        out.push(mean(&xs));
    }
    Ok(out)
}

/// Row-major feature matrix for a set of windows.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub schema: FeatureSchema,
    pub channels: usize,
    pub dim: usize,
    pub values: Vec<f64>,
    pub labels: Vec<u8>,
    pub subjects: Vec<u32>,
}

impl FeatureMatrix {
    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// CSV with a `# schema=...` comment line, a header and one row per window.
    pub fn to_csv(&self, provenance: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# schema={};{provenance}", self.schema.id());
        let names = self.schema.column_names(self.channels);
        let _ = writeln!(s, "label,subject,{}", names.join(","));
        for i in 0..self.rows() {
            let _ = write!(s, "{},{}", self.labels[i], self.subjects[i]);
            for v in self.row(i) {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: &Path, provenance: &str) -> Result<()> {
        codec::write_file(path, self.to_csv(provenance).as_bytes())
    }

    pub fn read_csv(path: &Path) -> Result<FeatureMatrix> {
        let text = std::fs::read_to_string(path).map_err(|e| HarError::io(path, e))?;
        let mut lines = text.lines();
        let bad = |line: usize, message: String| HarError::Ingest {
            path: path.to_path_buf(),
            line,
            message,
        };
        let schema_line = lines.next().ok_or_else(|| bad(1, "empty feature file".into()))?;
        let schema_id = schema_line
            .strip_prefix("# schema=")
            .and_then(|s| s.split(';').next())
            .ok_or_else(|| bad(1, "missing schema comment".into()))?;
        let schema = if schema_id == "statistical-v1" {
            FeatureSchema::Statistical
        } else if let Some(q) = schema_id
            .strip_prefix("ecdf-q")
            .and_then(|s| s.strip_suffix("-v1"))
            .and_then(|q| q.parse().ok())
        {
            FeatureSchema::Ecdf { n_quantiles: q }
        } else {
            return Err(bad(1, format!("unknown schema '{schema_id}'")));
        };
        let header = lines.next().ok_or_else(|| bad(2, "missing header".into()))?;
        let dim = header.split(',').count() - 2;
        let channels = (1..=16)
            .find(|&c| schema.dim(c) == dim)
            .ok_or_else(|| bad(2, format!("{dim} columns do not match schema {schema_id}")))?;
        let mut m = FeatureMatrix {
            schema,
            channels,
            dim,
            values: Vec::new(),
            labels: Vec::new(),
            subjects: Vec::new(),
        };
        for (i, line) in lines.enumerate() {
            let line_no = i + 3;
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != dim + 2 {
                return Err(bad(line_no, format!("expected {} cells, found {}", dim + 2, cells.len())));
            }
            m.labels
                .push(cells[0].parse().map_err(|_| bad(line_no, "bad label".into()))?);
            m.subjects
                .push(cells[1].parse().map_err(|_| bad(line_no, "bad subject".into()))?);
            for c in &cells[2..] {
                let v: f64 = c
                    .parse()
                    .map_err(|_| bad(line_no, format!("non-numeric value '{c}'")))?;
                m.values.push(v);
            }
        }
        Ok(m)
    }
}

/// Extract features for every window (parallel map, deterministic order).
pub fn extract_all(windows: &WindowBatch, schema: FeatureSchema) -> Result<FeatureMatrix> {
    let rows: Vec<Vec<f64>> = (0..windows.len())
        .into_par_iter()
        .map(|i| schema.extract(windows.window(i), windows.channels))
        .collect::<Result<_>>()?;
    let dim = schema.dim(windows.channels);
    let values: Vec<f64> = rows.into_iter().flatten().collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(HarError::Numeric(format!(
            "non-finite feature in window {}",
            i / dim
        )));
    }
    Ok(FeatureMatrix {
        schema,
        channels: windows.channels,
        dim,
        values,
        labels: windows.labels.clone(),
        subjects: windows.subjects.clone(),
    })
}
