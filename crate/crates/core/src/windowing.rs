//! Sliding-window segmentation.

use serde::{Deserialize, Serialize};

use crate::codec::{Reader, Writer};
use crate::data::SensorStream;
use crate::error::{HarError, Result};

/// How a window's single label is derived from its per-timestep labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelPolicy {
    /// Label of the last timestep.
    #[default]
    Last,
    /// Most frequent label, ties to the lowest id.
    Majority,
    First,
}

/// Treatment of windows whose timesteps carry more than one label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryMode {
    #[default]
    Keep,
    Discard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowParams {
    pub win_len: usize,
    pub step: usize,
    pub label_policy: LabelPolicy,
    pub boundary: BoundaryMode,
}

impl WindowParams {
    pub fn new(win_len: usize, step: usize) -> Self {
        Self {
            win_len,
            step,
            label_policy: LabelPolicy::Last,
            boundary: BoundaryMode::Keep,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.win_len == 0 || self.step == 0 {
            return Err(HarError::InvalidArgument(format!(
                "window length and step must be positive (got {} and {})",
                self.win_len, self.step
            )));
        }
        if self.step > self.win_len {
            return Err(HarError::InvalidArgument(format!(
                "step {} exceeds window length {}",
                self.step, self.win_len
            )));
        }
        Ok(())
    }
}

/// Number of full windows a stream of `len` samples yields.
pub fn window_count(len: usize, win_len: usize, step: usize) -> usize {
    if len < win_len {
        0
    } else {
        (len - win_len) / step + 1
    }
}

/// Fixed-length windows stored row-major as `[count][win_len][channels]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    pub data: Vec<f64>,
    pub labels: Vec<u8>,
    pub subjects: Vec<u32>,
    pub starts: Vec<usize>,
    pub win_len: usize,
    pub step: usize,
    pub channels: usize,
}

impl WindowBatch {
    pub fn empty(win_len: usize, step: usize, channels: usize) -> Self {
        Self {
            data: Vec::new(),
            labels: Vec::new(),
            subjects: Vec::new(),
            starts: Vec::new(),
            win_len,
            step,
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn window_size(&self) -> usize {
        self.win_len * self.channels
    }

    pub fn window(&self, i: usize) -> &[f64] {
        let w = self.window_size();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn append(&mut self, other: WindowBatch) -> Result<()> {
        if other.is_empty() {
            return Ok(());
        }
        if self.is_empty() && self.data.is_empty() {
            self.channels = other.channels;
        }
        if (other.win_len, other.channels) != (self.win_len, self.channels) {
            return Err(HarError::Shape(format!(
                "cannot append windows of shape {}x{} to {}x{}",
                other.win_len, other.channels, self.win_len, self.channels
            )));
        }
        self.data.extend(other.data);
        self.labels.extend(other.labels);
        self.subjects.extend(other.subjects);
        self.starts.extend(other.starts);
        Ok(())
    }

    /// Copy of the windows selected by `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> WindowBatch {
        let w = self.window_size();
        let mut data = Vec::with_capacity(idx.len() * w);
        for &i in idx {
            data.extend_from_slice(self.window(i));
        }
        WindowBatch {
            data,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            subjects: idx.iter().map(|&i| self.subjects[i]).collect(),
            starts: idx.iter().map(|&i| self.starts[i]).collect(),
            win_len: self.win_len,
            step: self.step,
            channels: self.channels,
        }
    }

    pub fn write(&self, w: &mut Writer) {
        w.usize(self.win_len);
        w.usize(self.step);
        w.usize(self.channels);
        w.f64s(&self.data);
        w.u8s(&self.labels);
        w.u32s(&self.subjects);
        w.usizes(&self.starts);
    }

    pub fn read(r: &mut Reader<'_>) -> Result<Self> {
        let b = WindowBatch {
            win_len: r.usize()?,
            step: r.usize()?,
            channels: r.usize()?,
            data: r.f64s()?,
            labels: r.u8s()?,
            subjects: r.u32s()?,
            starts: r.usizes()?,
        };
        let n = b.labels.len();
        if b.data.len() != n * b.window_size() || b.subjects.len() != n || b.starts.len() != n {
            return Err(HarError::Format("inconsistent window batch lengths".into()));
        }
        Ok(b)
    }
}

fn window_label(labels: &[u8], policy: LabelPolicy) -> u8 {
    match policy {
        LabelPolicy::Last => *labels.last().unwrap(),
        LabelPolicy::First => labels[0],
        LabelPolicy::Majority => {
            let mut counts = [0usize; 256];
            for &l in labels {
                counts[l as usize] += 1;
            }
            // max_by_key keeps the last maximum, so scan in reverse for lowest id
            (0..256)
                .rev()
                .max_by_key(|&l| counts[l])
                .map(|l| l as u8)
                .unwrap()
        }
    }
}

/// Cut `stream` into windows starting at `0, step, 2*step, ...`; the
/// trailing partial window is dropped.
pub fn segment(stream: &SensorStream, params: &WindowParams) -> Result<WindowBatch> {
    params.validate()?;
    let channels = stream.n_channels();
    let n = window_count(stream.len(), params.win_len, params.step);
    let mut batch = WindowBatch::empty(params.win_len, params.step, channels);
    batch.data.reserve(n * params.win_len * channels);
    for k in 0..n {
        let start = k * params.step;
        let labels = &stream.labels[start..start + params.win_len];
        if params.boundary == BoundaryMode::Discard && labels.iter().any(|&l| l != labels[0]) {
            continue;
        }
        for t in start..start + params.win_len {
            for c in 0..channels {
                batch.data.push(stream.channels[c][t]);
            }
        }
        batch.labels.push(window_label(labels, params.label_policy));
        batch.subjects.push(stream.subject_id);
        batch.starts.push(start);
    }
    Ok(batch)
}

/// Segment several streams; output is ordered by (input order, start index).
pub fn segment_streams(streams: &[SensorStream], params: &WindowParams) -> Result<WindowBatch> {
    let channels = streams.first().map_or(3, |s| s.n_channels());
    let mut out = WindowBatch::empty(params.win_len, params.step, channels);
    for s in streams {
        out.append(segment(s, params)?)?;
    }
    Ok(out)
}
