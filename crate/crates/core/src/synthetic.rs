//! Synthetic recordings in the MotionSense directory layout.
//!
//! Each activity gets its own gravity orientation, gait frequency and
//! amplitude; subjects differ by a random gain, tilt, tempo and phase so
//! that the subject-wise split is not trivial. Used by the tests and for
//! trying the pipelines without the real dataset.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::codec;
use crate::data::{Activity, SensorStream};
use crate::error::Result;
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub subjects: u32,
    pub trials_per_activity: u32,
    pub seconds_per_trial: f64,
    pub sample_rate_hz: f64,
    /// Standard deviation of the additive sensor noise, in g.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            subjects: 24,
            trials_per_activity: 1,
            seconds_per_trial: 20.0,
            sample_rate_hz: 50.0,
            noise: 0.12,
            seed: 0,
        }
    }
}

struct Profile {
    gravity: [f64; 3],
    freq_hz: f64,
    amplitude: [f64; 3],
}

fn profile(a: Activity) -> Profile {
    match a {
        Activity::Downstairs => Profile {
            gravity: [0.1, -0.97, 0.15],
            freq_hz: 2.0,
            amplitude: [0.25, 0.5, 0.2],
        },
        Activity::Upstairs => Profile {
            gravity: [0.05, -0.97, -0.15],
            freq_hz: 1.6,
            amplitude: [0.2, 0.4, 0.25],
        },
        Activity::Walking => Profile {
            gravity: [0.05, -1.0, 0.05],
            freq_hz: 1.8,
            amplitude: [0.2, 0.4, 0.15],
        },
        Activity::Jogging => Profile {
            gravity: [0.05, -1.0, 0.1],
            freq_hz: 2.7,
            amplitude: [0.5, 1.1, 0.4],
        },
        Activity::Standing => Profile {
            gravity: [0.0, -1.0, 0.0],
            freq_hz: 0.3,
            amplitude: [0.01, 0.01, 0.01],
        },
        Activity::Sitting => Profile {
            gravity: [0.1, -0.3, -0.95],
            freq_hz: 0.3,
            amplitude: [0.01, 0.01, 0.01],
        },
    }
}

/// Samples of one (subject, activity, trial) recording, `[3][n]`.
fn recording(spec: &SyntheticSpec, subject: u32, activity: Activity, trial: u32) -> [Vec<f64>; 3] {
    let mut srng = seed::substream(spec.seed, "synthetic-subject", subject as u64);
    let gain: f64 = srng.random_range(0.8..1.2);
    let tempo: f64 = srng.random_range(0.85..1.15);
    let tilt: [f64; 3] = std::array::from_fn(|_| srng.random_range(-0.15..0.15));

    let key = (subject as u64) << 16 | (activity.id() as u64) << 8 | trial as u64;
    let mut rng = seed::substream(spec.seed, "synthetic", key);
    let noise = Normal::new(0.0, spec.noise.max(0.0)).expect("finite noise level");
    let phase: f64 = rng.random_range(0.0..2.0 * PI);
    let p = profile(activity);
    let n = (spec.seconds_per_trial * spec.sample_rate_hz).round() as usize;
    let w = 2.0 * PI * p.freq_hz * tempo / spec.sample_rate_hz;
    let mut out: [Vec<f64>; 3] = Default::default();
    for i in 0..n {
        let t = w * i as f64 + phase;
        // fundamental plus a heel-strike harmonic
        let gait = [t.sin(), (t + 0.5).sin() + 0.4 * (2.0 * t).sin(), (t + 1.0).cos()];
        for c in 0..3 {
            let v = p.gravity[c] + tilt[c] + gain * p.amplitude[c] * gait[c] + noise.sample(&mut rng);
            out[c].push(v);
        }
    }
    out
}

/// Per-subject streams exactly as [`crate::data::load_dataset`] would read
/// them back from [`write_dataset`] (up to the six printed decimals).
pub fn generate_streams(spec: &SyntheticSpec) -> Result<Vec<SensorStream>> {
    let mut activities = Activity::ALL.to_vec();
    activities.sort_by_key(|a| a.code());
    (1..=spec.subjects)
        .map(|subject| {
            let mut channels: [Vec<f64>; 3] = Default::default();
            let mut labels = Vec::new();
            for &a in &activities {
                for trial in 1..=spec.trials_per_activity {
                    let r = recording(spec, subject, a, trial);
                    labels.extend(std::iter::repeat_n(a.id(), r[0].len()));
                    for c in 0..3 {
                        channels[c].extend_from_slice(&r[c]);
                    }
                }
            }
            SensorStream::new(subject, channels.to_vec(), labels, spec.sample_rate_hz)
        })
        .collect()
}

/// Write `<code>_<trial>/sub_<id>.csv` files with `x,y,z` columns.
pub fn write_dataset(root: &Path, spec: &SyntheticSpec) -> Result<()> {
    for a in Activity::ALL {
        for trial in 1..=spec.trials_per_activity {
            let dir = root.join(format!("{}_{trial}", a.code()));
            for subject in 1..=spec.subjects {
                let r = recording(spec, subject, a, trial);
                let mut text = String::from("x,y,z\n");
                for i in 0..r[0].len() {
                    let _ = writeln!(text, "{:.6},{:.6},{:.6}", r[0][i], r[1][i], r[2][i]);
                }
                codec::write_file(&dir.join(format!("sub_{subject}.csv")), text.as_bytes())?;
            }
        }
    }
    Ok(())
}
