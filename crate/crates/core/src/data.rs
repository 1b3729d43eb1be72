//! Recording ingestion, subject-wise splits and z-score normalization.
//!
//! The loader understands the public MotionSense layout: one directory per
//! (activity, trial) named `<code>_<trial>` (for example `wlk_7`) holding one
//! `sub_<id>.csv` per participant. Either the raw accelerometer export
//! (`x,y,z` columns) or the device-motion export (`userAcceleration.*` plus
//! `gravity.*`, summed into total acceleration) is accepted.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::codec::{self, ArtifactHeader, Reader, Writer};
use crate::error::{HarError, Result};
use crate::seed;

pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Activity {
    Downstairs = 0,
    Upstairs = 1,
    Walking = 2,
    Jogging = 3,
    Standing = 4,
    Sitting = 5,
}

impl Activity {
    pub const ALL: [Activity; 6] = [
        Activity::Downstairs,
        Activity::Upstairs,
        Activity::Walking,
        Activity::Jogging,
        Activity::Standing,
        Activity::Sitting,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.get(id as usize).copied()
    }

    /// Directory prefix used by the MotionSense release.
    pub fn code(self) -> &'static str {
        match self {
            Activity::Downstairs => "dws",
            Activity::Upstairs => "ups",
            Activity::Walking => "wlk",
            Activity::Jogging => "jog",
            Activity::Standing => "std",
            Activity::Sitting => "sit",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activity::Downstairs => "downstairs",
            Activity::Upstairs => "upstairs",
            Activity::Walking => "walking",
            Activity::Jogging => "jogging",
            Activity::Standing => "standing",
            Activity::Sitting => "sitting",
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|a| a.code() == code || a.name() == code)
    }
}

pub fn class_names() -> Vec<String> {
    Activity::ALL.iter().map(|a| a.name().to_string()).collect()
}

/// One subject's recording: equally long channels plus per-timestep labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorStream {
    pub subject_id: u32,
    pub channels: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
    pub sample_rate_hz: f64,
}

impl SensorStream {
    pub fn new(
        subject_id: u32,
        channels: Vec<Vec<f64>>,
        labels: Vec<u8>,
        sample_rate_hz: f64,
    ) -> Result<Self> {
        if channels.is_empty() {
            return Err(HarError::Data(format!("subject {subject_id}: no channels")));
        }
        if labels.is_empty() {
            return Err(HarError::Data(format!("subject {subject_id}: empty stream")));
        }
        if let Some(c) = channels.iter().position(|c| c.len() != labels.len()) {
            return Err(HarError::Data(format!(
                "subject {subject_id}: channel {c} has {} samples but there are {} labels",
                channels[c].len(),
                labels.len()
            )));
        }
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(HarError::Data(format!(
                "subject {subject_id}: sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        Ok(Self {
            subject_id,
            channels,
            labels,
            sample_rate_hz,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }
}

struct Recording {
    activity: Activity,
    trial: u32,
    file_name: String,
    path: PathBuf,
    subject: u32,
}

fn parse_trial_dir(name: &str) -> Option<(&str, Option<u32>)> {
    let (code, trial) = name.rsplit_once('_')?;
    Some((code, trial.parse().ok()))
}

fn parse_subject_file(name: &str) -> Option<u32> {
    name.strip_prefix("sub_")?.strip_suffix(".csv")?.parse().ok()
}

fn collect_csv(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(|e| HarError::io(dir, e))?
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| HarError::io(dir, e))?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let path = entry.path();
        if path.is_dir() {
            collect_csv(&path, out)?;
        } else if path.extension().is_some_and(|e| e == "csv") {
            out.push(path);
        }
    }
    Ok(())
}

enum Columns {
    Plain([usize; 3]),
    DeviceMotion { user: [usize; 3], gravity: [usize; 3] },
}

fn resolve_columns(header: &str) -> Option<Columns> {
    let cols: Vec<&str> = header.split(',').map(|c| c.trim().trim_matches('"')).collect();
    let find = |name: &str| cols.iter().position(|c| *c == name);
    if let (Some(x), Some(y), Some(z)) = (find("x"), find("y"), find("z")) {
        return Some(Columns::Plain([x, y, z]));
    }
    let user = [
        find("userAcceleration.x")?,
        find("userAcceleration.y")?,
        find("userAcceleration.z")?,
    ];
    let gravity = [find("gravity.x")?, find("gravity.y")?, find("gravity.z")?];
    Some(Columns::DeviceMotion { user, gravity })
}

fn read_recording(path: &Path) -> Result<[Vec<f64>; 3]> {
    let text = fs::read_to_string(path).map_err(|e| HarError::io(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| HarError::Ingest {
        path: path.to_path_buf(),
        line: 1,
        message: "empty file".into(),
    })?;
    let columns = resolve_columns(header).ok_or_else(|| HarError::Ingest {
        path: path.to_path_buf(),
        line: 1,
        message: "header has no accelerometer columns (x,y,z or userAcceleration.*/gravity.*)"
            .into(),
    })?;
    let mut out: [Vec<f64>; 3] = Default::default();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        let cell = |idx: usize| -> Result<f64> {
            let raw = cells.get(idx).map(|c| c.trim()).unwrap_or("");
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(HarError::Ingest {
                    path: path.to_path_buf(),
                    line: line_no,
                    message: format!("non-numeric or non-finite value '{raw}' in column {}", idx + 1),
                }),
            }
        };
        for axis in 0..3 {
            let v = match &columns {
                Columns::Plain(c) => cell(c[axis])?,
                Columns::DeviceMotion { user, gravity } => cell(user[axis])? + cell(gravity[axis])?,
            };
            out[axis].push(v);
        }
    }
    Ok(out)
}

/// Load every `sub_<id>.csv` recording below `root` into one stream per
/// subject. Trials are concatenated ordered by (activity code, trial number,
/// file name).
pub fn load_dataset(root: &Path, sample_rate_hz: f64) -> Result<Vec<SensorStream>> {
    if !root.is_dir() {
        return Err(HarError::Data(format!(
            "dataset directory {} does not exist",
            root.display()
        )));
    }
    let mut files = Vec::new();
    collect_csv(root, &mut files)?;

    let mut recordings = Vec::new();
    for path in files {
        let file_name = path.file_name().unwrap().to_string_lossy().to_string();
        let Some(subject) = parse_subject_file(&file_name) else {
            continue;
        };
        let dir_name = path
            .parent()
            .and_then(|p| p.file_name())
            .map(|n| n.to_string_lossy().to_string())
            .unwrap_or_default();
        let (code, trial) = parse_trial_dir(&dir_name).unwrap_or((dir_name.as_str(), None));
        let activity = Activity::from_code(code).ok_or_else(|| HarError::Ingest {
            path: path.clone(),
            line: 0,
            message: format!("unknown activity '{code}' in directory name '{dir_name}'"),
        })?;
        let trial = trial.ok_or_else(|| HarError::Ingest {
            path: path.clone(),
            line: 0,
            message: format!("directory '{dir_name}' is not of the form <activity>_<trial>"),
        })?;
        recordings.push(Recording {
            activity,
            trial,
            file_name,
            path,
            subject,
        });
    }
    if recordings.is_empty() {
        return Err(HarError::Data(format!(
            "no recordings found under {}",
            root.display()
        )));
    }

    recordings.sort_by(|a, b| {
        (a.activity.code(), a.trial, &a.file_name).cmp(&(b.activity.code(), b.trial, &b.file_name))
    });
    let mut seen = BTreeSet::new();
    for r in &recordings {
        if !seen.insert((r.subject, r.activity, r.trial)) {
            return Err(HarError::Ingest {
                path: r.path.clone(),
                line: 0,
                message: format!(
                    "duplicate recording for subject {} ({}_{})",
                    r.subject,
                    r.activity.code(),
                    r.trial
                ),
            });
        }
    }

    let mut per_subject: BTreeMap<u32, ([Vec<f64>; 3], Vec<u8>)> = BTreeMap::new();
    for r in &recordings {
        let data = read_recording(&r.path)?;
        let entry = per_subject.entry(r.subject).or_default();
        let n = data[0].len();
        for axis in 0..3 {
            entry.0[axis].extend_from_slice(&data[axis]);
        }
        entry.1.extend(std::iter::repeat_n(r.activity.id(), n));
    }

    per_subject
        .into_iter()
        .filter(|(_, (_, labels))| !labels.is_empty())
        .map(|(subject, (channels, labels))| {
            SensorStream::new(subject, channels.to_vec(), labels, sample_rate_hz)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: BTreeSet<u32>,
    pub val: BTreeSet<u32>,
    pub test: BTreeSet<u32>,
    pub seed: u64,
}

impl SplitAssignment {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }

    /// Leakage guard: no subject may appear in two splits.
    pub fn check_disjoint(&self) -> Result<()> {
        let overlap = self
            .train
            .intersection(&self.val)
            .chain(self.train.intersection(&self.test))
            .chain(self.val.intersection(&self.test))
            .next();
        match overlap {
            Some(s) => Err(HarError::Data(format!("subject {s} appears in more than one split"))),
            None => Ok(()),
        }
    }
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

/// Seeded subject-wise split: `round(n * test_frac)` subjects go to test,
/// then `round(m * val_frac)` of the remaining `m` go to validation.
/// Every split is forced to hold at least one subject.
pub fn split_subjects(
    subject_ids: &[u32],
    test_frac: f64,
    val_frac: f64,
    seed: u64,
) -> Result<SplitAssignment> {
    if !(test_frac > 0.0 && val_frac > 0.0 && test_frac + val_frac < 1.0) {
        return Err(HarError::InvalidArgument(format!(
            "split fractions must be positive with test + val < 1 (got {test_frac}, {val_frac})"
        )));
    }
    let mut ids: Vec<u32> = subject_ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let n = ids.len();
    if n < 3 {
        return Err(HarError::Data(format!(
            "need at least 3 subjects to form train/val/test splits, got {n}"
        )));
    }
    ids.shuffle(&mut seed::rng_from(seed));

    let n_test = round_half_up(n as f64 * test_frac).clamp(1, n - 2);
    let m = n - n_test;
    let n_val = round_half_up(m as f64 * val_frac).clamp(1, m - 1);

    let split = SplitAssignment {
        test: ids[..n_test].iter().copied().collect(),
        val: ids[n_test..n_test + n_val].iter().copied().collect(),
        train: ids[n_test + n_val..].iter().copied().collect(),
        seed,
    };
    split.check_disjoint()?;
    Ok(split)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }
}

/// Per-channel mean and population standard deviation over the
/// concatenation of `streams`. A zero-variance channel gets std 1.
pub fn fit_normalizer(streams: &[SensorStream]) -> Result<NormStats> {
    let first = streams
        .first()
        .ok_or_else(|| HarError::Data("cannot fit normalizer on zero streams".into()))?;
    let channels = first.n_channels();
    if let Some(s) = streams.iter().find(|s| s.n_channels() != channels) {
        return Err(HarError::Shape(format!(
            "subject {} has {} channels, expected {channels}",
            s.subject_id,
            s.n_channels()
        )));
    }
    let total: usize = streams.iter().map(|s| s.len()).sum();
    let mut mean = vec![0.0; channels];
    let mut std = vec![0.0; channels];
    for c in 0..channels {
        let sum: f64 = streams.iter().flat_map(|s| s.channels[c].iter()).sum();
        let mu = sum / total as f64;
        let ss: f64 = streams
            .iter()
            .flat_map(|s| s.channels[c].iter())
            .map(|x| (x - mu) * (x - mu))
            .sum();
        let sd = (ss / total as f64).sqrt();
        mean[c] = mu;
        std[c] = if sd > 0.0 && sd.is_finite() {
            sd
        } else {
            log::warn!("channel {c} has zero variance in the training split; using std = 1");
            1.0
        };
    }
    Ok(NormStats { mean, std })
}

pub fn apply_normalizer(stream: &SensorStream, stats: &NormStats) -> Result<SensorStream> {
    if stream.n_channels() != stats.mean.len() || stats.mean.len() != stats.std.len() {
        return Err(HarError::Shape(format!(
            "stream has {} channels, normalizer has {}",
            stream.n_channels(),
            stats.mean.len()
        )));
    }
    let channels = stream
        .channels
        .iter()
        .enumerate()
        .map(|(c, xs)| xs.iter().map(|x| (x - stats.mean[c]) / stats.std[c]).collect())
        .collect();
    Ok(SensorStream {
        channels,
        ..stream.clone()
    })
}

/// Normalized train/val/test streams plus everything needed to reproduce them.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedDataset {
    pub split: SplitAssignment,
    pub norm: NormStats,
    pub train: Vec<SensorStream>,
    pub val: Vec<SensorStream>,
    pub test: Vec<SensorStream>,
}

pub const PREPARED_KIND: &str = "prepared-streams";
pub const PREPARED_VERSION: u32 = 1;

impl PreparedDataset {
    /// Split `streams` by subject, fit normalization on train only and apply
    /// it to all three splits.
    pub fn build(
        streams: &[SensorStream],
        test_frac: f64,
        val_frac: f64,
        split_seed: u64,
    ) -> Result<Self> {
        let ids: Vec<u32> = streams.iter().map(|s| s.subject_id).collect();
        let split = split_subjects(&ids, test_frac, val_frac, split_seed)?;
        let pick = |set: &BTreeSet<u32>| -> Vec<SensorStream> {
            streams
                .iter()
                .filter(|s| set.contains(&s.subject_id))
                .cloned()
                .collect()
        };
        let (train, val, test) = (pick(&split.train), pick(&split.val), pick(&split.test));
        let norm = fit_normalizer(&train)?;
        let apply = |v: Vec<SensorStream>| -> Result<Vec<SensorStream>> {
            v.iter().map(|s| apply_normalizer(s, &norm)).collect()
        };
        Ok(Self {
            train: apply(train)?,
            val: apply(val)?,
            test: apply(test)?,
            split,
            norm,
        })
    }

    pub fn to_bytes(&self, header: &ArtifactHeader) -> Vec<u8> {
        let mut w = Writer::new();
        header.write(&mut w);
        for set in [&self.split.train, &self.split.val, &self.split.test] {
            w.u32s(&set.iter().copied().collect::<Vec<_>>());
        }
        w.u64(self.split.seed);
        w.f64s(&self.norm.mean);
        w.f64s(&self.norm.std);
        for streams in [&self.train, &self.val, &self.test] {
            w.usize(streams.len());
            for s in streams {
                w.u32(s.subject_id);
                w.f64(s.sample_rate_hz);
                w.usize(s.channels.len());
                for c in &s.channels {
                    w.f64s(c);
                }
                w.u8s(&s.labels);
            }
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(ArtifactHeader, Self)> {
        let mut r = Reader::new(bytes);
        let header = ArtifactHeader::expect(&mut r, PREPARED_KIND, PREPARED_VERSION)?;
        let mut sets = Vec::new();
        for _ in 0..3 {
            sets.push(r.u32s()?.into_iter().collect::<BTreeSet<u32>>());
        }
        let split_seed = r.u64()?;
        let norm = NormStats {
            mean: r.f64s()?,
            std: r.f64s()?,
        };
        let mut splits = Vec::new();
        for _ in 0..3 {
            let n = r.usize()?;
            let mut streams = Vec::with_capacity(n.min(1024));
            for _ in 0..n {
                let subject = r.u32()?;
                let rate = r.f64()?;
                let nc = r.usize()?;
                let channels = (0..nc).map(|_| r.f64s()).collect::<Result<Vec<_>>>()?;
                let labels = r.u8s()?;
                streams.push(SensorStream::new(subject, channels, labels, rate)?);
            }
            splits.push(streams);
        }
        let test = splits.pop().unwrap();
        let val = splits.pop().unwrap();
        let train = splits.pop().unwrap();
        let test_ids = sets.pop().unwrap();
        let val_ids = sets.pop().unwrap();
        let train_ids = sets.pop().unwrap();
        let split = SplitAssignment {
            train: train_ids,
            val: val_ids,
            test: test_ids,
            seed: split_seed,
        };
        split.check_disjoint()?;
        Ok((
            header,
            Self {
                split,
                norm,
                train,
                val,
                test,
            },
        ))
    }

    pub fn save(&self, path: &Path, header: &ArtifactHeader) -> Result<()> {
        codec::write_file(path, &self.to_bytes(header))
    }

    pub fn load(path: &Path) -> Result<(ArtifactHeader, Self)> {
        Self::from_bytes(&codec::read_file(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stream(subject: u32, xs: Vec<f64>) -> SensorStream {
        let n = xs.len();
        SensorStream::new(subject, vec![xs.clone(), xs.clone(), xs], vec![0; n], 50.0).unwrap()
    }

    #[test]
    fn split_sizes_for_24_subjects() {
        let ids: Vec<u32> = (1..=24).collect();
        for seed in 0..50 {
            let s = split_subjects(&ids, 0.2, 0.2, seed).unwrap();
            assert_eq!(s.sizes(), (15, 4, 5));
        }
    }

    #[test]
    fn minimal_split_has_one_subject_each() {
        let s = split_subjects(&[7, 8, 9], 0.2, 0.2, 1).unwrap();
        assert_eq!(s.sizes(), (1, 1, 1));
        assert!(split_subjects(&[1, 2], 0.2, 0.2, 1).is_err());
        assert!(split_subjects(&[1, 2, 3], 0.6, 0.5, 1).is_err());
    }

    #[test]
    fn zero_variance_channel_uses_unit_std() {
        let s = stream(1, vec![5.0; 10]);
        let stats = fit_normalizer(&[s]).unwrap();
        assert_eq!(stats.mean, vec![5.0; 3]);
        assert_eq!(stats.std, vec![1.0; 3]);
    }

    #[test]
    fn plus_minus_one_has_unit_population_std() {
        let s = stream(1, vec![-1.0, 1.0, -1.0, 1.0]);
        let stats = fit_normalizer(&[s]).unwrap();
        // brute force over the sample
        let xs = [-1.0f64, 1.0, -1.0, 1.0];
        let mu = xs.iter().sum::<f64>() / 4.0;
        let var = xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / 4.0;
        assert_eq!(stats.mean[0], mu);
        assert_eq!(stats.std[0], var.sqrt());
        assert_eq!(stats.std[0], 1.0);
    }

    #[test]
    fn identity_stats_leave_stream_unchanged() {
        let s = stream(1, vec![0.3, -2.0, 9.5]);
        assert_eq!(apply_normalizer(&s, &NormStats::identity(3)).unwrap(), s);
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let s = stream(1, vec![0.3, -2.0]);
        assert!(apply_normalizer(&s, &NormStats::identity(2)).is_err());
    }

    #[test]
    fn test_split_uses_train_statistics() {
        let train = stream(1, vec![0.0, 2.0]);
        let test = stream(2, vec![10.0, 12.0]);
        let stats = fit_normalizer(std::slice::from_ref(&train)).unwrap();
        let t = apply_normalizer(&test, &stats).unwrap();
        assert_eq!(t.channels[0], vec![9.0, 11.0]);
    }

    proptest! {
        #[test]
        fn split_is_deterministic_and_disjoint(n in 3u32..60, seed in any::<u64>()) {
            let ids: Vec<u32> = (0..n).collect();
            let a = split_subjects(&ids, 0.2, 0.2, seed).unwrap();
            let b = split_subjects(&ids, 0.2, 0.2, seed).unwrap();
            prop_assert_eq!(&a, &b);
            a.check_disjoint().unwrap();
            let (tr, va, te) = a.sizes();
            prop_assert_eq!(tr + va + te, n as usize);
            prop_assert!(tr > 0 && va > 0 && te > 0);
        }

        #[test]
        fn normalized_train_data_is_standardized(
            xs in proptest::collection::vec(-100.0f64..100.0, 2..200),
            ys in proptest::collection::vec(-5.0f64..5.0, 2..200),
        ) {
            prop_assume!(xs.iter().any(|x| (x - xs[0]).abs() > 1e-3));
            prop_assume!(ys.iter().any(|y| (y - ys[0]).abs() > 1e-3));
            let streams = vec![stream(1, xs), stream(2, ys)];
            let stats = fit_normalizer(&streams).unwrap();
            let normed: Vec<_> = streams.iter().map(|s| apply_normalizer(s, &stats).unwrap()).collect();
            let refit = fit_normalizer(&normed).unwrap();
            for c in 0..3 {
                let all: Vec<f64> = normed.iter().flat_map(|s| s.channels[c].iter().copied()).collect();
                let mu = all.iter().sum::<f64>() / all.len() as f64;
                let var = all.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / all.len() as f64;
                prop_assert!(mu.abs() < 1e-9);
                prop_assert!((var - 1.0).abs() < 1e-6);
                prop_assert!((refit.std[c] - 1.0).abs() < 1e-6);
            }
        }
    }
}
