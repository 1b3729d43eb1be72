//! Stochastic time-series transformations on windows stored row-major as
//! `[n][T][C]`, and the ordered-pair cursor used by contrastive training.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::codec::{Reader, Writer};
use crate::error::{HarError, Result};
use crate::seed::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    /// Additive Gaussian noise.
    Jitter,
    /// Multiplicative factor drawn around 1.
    Scale,
    /// One random 3-D rotation per window.
    Rotate3d,
    Negate,
    TimeFlip,
    /// Shuffle contiguous segments of the time axis.
    Permute,
    /// Smooth monotone resampling of the time axis.
    TimeWarp,
    ChannelShuffle,
}

impl TransformKind {
    pub const ALL: [TransformKind; 8] = [
        TransformKind::Jitter,
        TransformKind::Scale,
        TransformKind::Rotate3d,
        TransformKind::Negate,
        TransformKind::TimeFlip,
        TransformKind::Permute,
        TransformKind::TimeWarp,
        TransformKind::ChannelShuffle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TransformKind::Jitter => "jitter",
            TransformKind::Scale => "scale",
            TransformKind::Rotate3d => "rotate3d",
            TransformKind::Negate => "negate",
            TransformKind::TimeFlip => "time_flip",
            TransformKind::Permute => "permute",
            TransformKind::TimeWarp => "time_warp",
            TransformKind::ChannelShuffle => "channel_shuffle",
        }
    }

    /// Pool used for contrastive pairs: everything except `permute`.
    pub fn simclr_pool() -> Vec<TransformKind> {
        Self::ALL
            .into_iter()
            .filter(|&k| k != TransformKind::Permute)
            .collect()
    }

    pub fn multitask_pool() -> Vec<TransformKind> {
        Self::ALL.to_vec()
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TransformKind {
    type Err = HarError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| HarError::InvalidArgument(format!("unknown transform '{s}'")))
    }
}

/// Magnitudes of the parameterized transforms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentParams {
    pub jitter_sigma: f64,
    pub scale_sigma: f64,
    /// Draw one scale factor per channel instead of per window.
    pub scale_per_channel: bool,
    pub permute_segments: usize,
    pub warp_knots: usize,
    pub warp_sigma: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            jitter_sigma: 0.05,
            scale_sigma: 0.1,
            scale_per_channel: false,
            permute_segments: 4,
            warp_knots: 4,
            warp_sigma: 0.2,
        }
    }
}

impl AugmentParams {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        for (name, v) in [
            ("jitter_sigma", self.jitter_sigma),
            ("scale_sigma", self.scale_sigma),
            ("warp_sigma", self.warp_sigma),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                errs.push(format!("{name}: must be a positive number, got {v}"));
            }
        }
        if self.permute_segments < 2 {
            errs.push(format!(
                "permute_segments: must be at least 2, got {}",
                self.permute_segments
            ));
        }
        if self.warp_knots < 1 {
            errs.push("warp_knots: must be at least 1".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(HarError::Config(errs))
        }
    }
}

/// Rotation by `angle` radians about the unit vector `axis` (Rodrigues).
pub fn rotation_matrix(axis: [f64; 3], angle: f64) -> [[f64; 3]; 3] {
    let [x, y, z] = axis;
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

/// Haar-uniform rotation: a normalized Gaussian quaternion. Drawing the
/// axis-angle angle uniformly would over-weight small rotations.
pub fn random_rotation(rng: &mut Rng) -> [[f64; 3]; 3] {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-12 {
            let [w, x, y, z] = q.map(|v| v / n);
            return [
                [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
                [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
                [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
            ];
        }
    }
}

/// Natural cubic spline through `(xs[i], ys[i])`, evaluated at `at`.
fn natural_cubic_spline(xs: &[f64], ys: &[f64], at: &[f64]) -> Vec<f64> {
    let n = xs.len();
    if n < 3 {
        // straight line through the ends
        return at
            .iter()
            .map(|&x| {
                if n == 1 {
                    ys[0]
                } else {
                    ys[0] + (ys[1] - ys[0]) * (x - xs[0]) / (xs[1] - xs[0])
                }
            })
            .collect();
    }
    let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
    // second derivatives m[0] = m[n-1] = 0; Thomas algorithm on the interior
    let mut m = vec![0.0; n];
    let k = n - 2;
    let mut diag = vec![0.0; k];
    let mut rhs = vec![0.0; k];
    for i in 0..k {
        diag[i] = 2.0 * (h[i] + h[i + 1]);
        rhs[i] = 6.0 * ((ys[i + 2] - ys[i + 1]) / h[i + 1] - (ys[i + 1] - ys[i]) / h[i]);
    }
    for i in 1..k {
        let w = h[i] / diag[i - 1];
        diag[i] -= w * h[i];
        rhs[i] -= w * rhs[i - 1];
    }
    for i in (0..k).rev() {
        let upper = if i + 1 < k { h[i + 1] * m[i + 2] } else { 0.0 };
        m[i + 1] = (rhs[i] - upper) / diag[i];
    }
    at.iter()
        .map(|&x| {
            let mut j = xs.partition_point(|&v| v <= x).saturating_sub(1);
            j = j.min(n - 2);
            let (a, b) = (xs[j + 1] - x, x - xs[j]);
            let hj = h[j];
            m[j] * a * a * a / (6.0 * hj)
                + m[j + 1] * b * b * b / (6.0 * hj)
                + (ys[j] / hj - m[j] * hj / 6.0) * a
                + (ys[j + 1] / hj - m[j + 1] * hj / 6.0) * b
        })
        .collect()
}

const MIN_SPEED: f64 = 1e-3;

/// Strictly increasing map from output step `i` to a source position in
/// `[0, T-1]`, with both ends fixed. The local speed is a natural cubic
/// spline through `knots + 2` equally spaced values drawn from
/// `N(1, sigma^2)`, floored at a small positive value.
pub fn time_warp_map(t: usize, knots: usize, sigma: f64, rng: &mut Rng) -> Vec<f64> {
    if t < 2 {
        return vec![0.0; t];
    }
    let normal = Normal::new(1.0, sigma).expect("positive sigma");
    let last = (t - 1) as f64;
    let xs: Vec<f64> = (0..knots + 2)
        .map(|i| last * i as f64 / (knots + 1) as f64)
        .collect();
    let ys: Vec<f64> = xs.iter().map(|_| normal.sample(rng)).collect();
    let steps: Vec<f64> = (0..t).map(|i| i as f64).collect();
    let speed = natural_cubic_spline(&xs, &ys, &steps);
    let mut cum = Vec::with_capacity(t);
    let mut acc = 0.0;
    for s in speed {
        acc += s.max(MIN_SPEED);
        cum.push(acc);
    }
    let (lo, hi) = (cum[0], cum[t - 1]);
    cum.iter().map(|&c| (c - lo) / (hi - lo) * last).collect()
}

/// Linear interpolation of each channel of a `[T][C]` window at `pos`.
fn resample(window: &mut [f64], t: usize, c: usize, pos: &[f64]) {
    let src = window.to_vec();
    for (i, &p) in pos.iter().enumerate() {
        let j = (p.floor() as usize).min(t - 1);
        let frac = p - j as f64;
        for ch in 0..c {
            let a = src[j * c + ch];
            let b = if j + 1 < t { src[(j + 1) * c + ch] } else { a };
            window[i * c + ch] = a + (b - a) * frac;
        }
    }
}

/// Segment boundaries for splitting `t` steps into `n` contiguous parts
/// whose lengths differ by at most one.
fn segment_bounds(t: usize, n: usize) -> Vec<usize> {
    (0..=n).map(|i| i * t / n).collect()
}

/// Transform one `[T][C]` window in place.
pub fn apply_window(
    kind: TransformKind,
    params: &AugmentParams,
    window: &mut [f64],
    t: usize,
    c: usize,
    rng: &mut Rng,
) -> Result<()> {
    if window.len() != t * c {
        return Err(HarError::Shape(format!(
            "window has {} values, expected {t}x{c}",
            window.len()
        )));
    }
    match kind {
        TransformKind::Jitter => {
            let noise = Normal::new(0.0, params.jitter_sigma)
                .map_err(|e| HarError::InvalidArgument(format!("jitter_sigma: {e}")))?;
            for v in window.iter_mut() {
                *v += noise.sample(rng);
            }
        }
        TransformKind::Scale => {
            let dist = Normal::new(1.0, params.scale_sigma)
                .map_err(|e| HarError::InvalidArgument(format!("scale_sigma: {e}")))?;
            let factors: Vec<f64> = if params.scale_per_channel {
                (0..c).map(|_| dist.sample(rng)).collect()
            } else {
                vec![dist.sample(rng); c]
            };
            for row in window.chunks_mut(c) {
                for (v, f) in row.iter_mut().zip(&factors) {
                    *v *= f;
                }
            }
        }
        TransformKind::Rotate3d => {
            if c != 3 {
                return Err(HarError::Shape(format!("rotate3d needs 3 channels, got {c}")));
            }
            let r = random_rotation(rng);
            for row in window.chunks_mut(3) {
                let v = [row[0], row[1], row[2]];
                for (i, out) in row.iter_mut().enumerate() {
                    *out = r[i][0] * v[0] + r[i][1] * v[1] + r[i][2] * v[2];
                }
            }
        }
        TransformKind::Negate => window.iter_mut().for_each(|v| *v = -*v),
        TransformKind::TimeFlip => {
            for i in 0..t / 2 {
                for ch in 0..c {
                    window.swap(i * c + ch, (t - 1 - i) * c + ch);
                }
            }
        }
        TransformKind::Permute => {
            let n = params.permute_segments;
            if n == 0 || n > t {
                return Err(HarError::InvalidArgument(format!(
                    "cannot split {t} steps into {n} segments"
                )));
            }
            let bounds = segment_bounds(t, n);
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(rng);
            let src = window.to_vec();
            let mut pos = 0;
            for &s in &order {
                let seg = &src[bounds[s] * c..bounds[s + 1] * c];
                window[pos..pos + seg.len()].copy_from_slice(seg);
                pos += seg.len();
            }
        }
        TransformKind::TimeWarp => {
            if !(params.warp_sigma > 0.0) || params.warp_knots == 0 {
                return Err(HarError::InvalidArgument("time_warp needs warp_sigma > 0 and warp_knots >= 1".into()));
            }
            let map = time_warp_map(t, params.warp_knots, params.warp_sigma, rng);
            resample(window, t, c, &map);
        }
        TransformKind::ChannelShuffle => {
            let mut perm: Vec<usize> = (0..c).collect();
            perm.shuffle(rng);
            for row in window.chunks_mut(c) {
                let src = row.to_vec();
                for (dst, &p) in row.iter_mut().zip(&perm) {
                    *dst = src[p];
                }
            }
        }
    }
    Ok(())
}

/// Transform every window of a row-major `[n][T][C]` buffer in place.
pub fn apply_transform(
    kind: TransformKind,
    params: &AugmentParams,
    data: &mut [f64],
    t: usize,
    c: usize,
    rng: &mut Rng,
) -> Result<()> {
    let w = t * c;
    if w == 0 || !data.len().is_multiple_of(w) {
        return Err(HarError::Shape(format!(
            "{} values do not form windows of {t}x{c}",
            data.len()
        )));
    }
    for window in data.chunks_mut(w) {
        apply_window(kind, params, window, t, c, rng)?;
    }
    Ok(())
}

/// Every ordered pair `(a, b)` with `a != b`, in lexicographic index order.
pub fn ordered_pairs(pool: &[TransformKind]) -> Vec<(TransformKind, TransformKind)> {
    let mut out = Vec::with_capacity(pool.len() * pool.len().saturating_sub(1));
    for (i, &a) in pool.iter().enumerate() {
        for (j, &b) in pool.iter().enumerate() {
            if i != j {
                out.push((a, b));
            }
        }
    }
    out
}

/// Walks a freshly shuffled list of all ordered pairs each cycle. The
/// shuffle of cycle `k` depends only on `(seed, k)`, so the position
/// `(cycle, pos)` is the complete state.
#[derive(Debug, Clone, PartialEq)]
pub struct PairCursor {
    pairs: Vec<(TransformKind, TransformKind)>,
    order: Vec<usize>,
    seed: u64,
    cycle: u64,
    pos: usize,
}

impl PairCursor {
    pub fn new(pool: &[TransformKind], seed: u64) -> Result<Self> {
        let pairs = ordered_pairs(pool);
        if pairs.is_empty() {
            return Err(HarError::InvalidArgument(
                "transform pool needs at least two kinds".into(),
            ));
        }
        let mut c = Self {
            order: Vec::new(),
            pairs,
            seed,
            cycle: 0,
            pos: 0,
        };
        c.reshuffle();
        Ok(c)
    }

    fn reshuffle(&mut self) {
        self.order = (0..self.pairs.len()).collect();
        self.order.shuffle(&mut seed::substream(self.seed, "pairs", self.cycle));
    }

    pub fn cycle_len(&self) -> usize {
        self.pairs.len()
    }

    pub fn next_pair(&mut self) -> (TransformKind, TransformKind) {
        if self.pos == self.pairs.len() {
            self.cycle += 1;
            self.pos = 0;
            self.reshuffle();
        }
        let p = self.pairs[self.order[self.pos]];
        self.pos += 1;
        p
    }

    pub fn write(&self, w: &mut Writer) {
        w.u64(self.cycle);
        w.usize(self.pos);
    }

    /// Restore a position saved by [`Self::write`] for the same pool and seed.
    pub fn read_position(&mut self, r: &mut Reader<'_>) -> Result<()> {
        let cycle = r.u64()?;
        let pos = r.usize()?;
        if pos > self.pairs.len() {
            return Err(HarError::Format("pair cursor position out of range".into()));
        }
        self.cycle = cycle;
        self.pos = pos;
        self.reshuffle();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng as _;
    use std::collections::HashSet;

    fn random_windows(n: usize, t: usize, s: u64) -> Vec<f64> {
        let mut rng = seed::rng_from(s);
        (0..n * t * 3).map(|_| rng.random_range(-2.0..2.0)).collect()
    }

    fn norms(data: &[f64]) -> Vec<f64> {
        data.chunks(3)
            .map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt())
            .collect()
    }

    fn det(r: &[[f64; 3]; 3]) -> f64 {
        r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
    }

    #[test]
    fn rotation_angles_follow_the_haar_law() {
        // Under the uniform measure on SO(3) the angle has CDF (t - sin t) / pi,
        // so the mean trace 1 + 2 cos t is 0 and P(t < pi/2) = 1/2 - 1/pi.
        let mut rng = seed::rng_from(11);
        let n = 40_000;
        let (mut trace_sum, mut small) = (0.0, 0usize);
        for _ in 0..n {
            let r = random_rotation(&mut rng);
            let tr = r[0][0] + r[1][1] + r[2][2];
            trace_sum += tr;
            if tr > 1.0 {
                small += 1;
            }
        }
        let expected_small = 0.5 - std::f64::consts::FRAC_1_PI;
        assert!((trace_sum / n as f64).abs() < 0.03);
        assert!((small as f64 / n as f64 - expected_small).abs() < 0.01);
    }

    proptest! {
        #[test]
        fn rotations_are_proper_orthogonal(s in any::<u64>()) {
            let r = random_rotation(&mut seed::rng_from(s));
            for i in 0..3 {
                for j in 0..3 {
                    let dot: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                    let expected = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((dot - expected).abs() < 1e-6);
                }
            }
            prop_assert!((det(&r) - 1.0).abs() < 1e-6);
        }

        #[test]
        fn rotate3d_preserves_norms(s in any::<u64>()) {
            let x = random_windows(3, 20, s);
            let mut y = x.clone();
            apply_transform(TransformKind::Rotate3d, &AugmentParams::default(), &mut y, 20, 3, &mut seed::rng_from(s)).unwrap();
            for (a, b) in norms(&x).iter().zip(norms(&y)) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }

        #[test]
        fn involutions(s in any::<u64>(), t in 1usize..40) {
            let x = random_windows(2, t, s);
            let mut rng = seed::rng_from(s);
            for kind in [TransformKind::Negate, TransformKind::TimeFlip] {
                let mut y = x.clone();
                apply_transform(kind, &AugmentParams::default(), &mut y, t, 3, &mut rng).unwrap();
                apply_transform(kind, &AugmentParams::default(), &mut y, t, 3, &mut rng).unwrap();
                prop_assert_eq!(&y, &x);
            }
        }

        #[test]
        fn every_transform_keeps_shape_and_is_reproducible(s in any::<u64>(), t in 8usize..60) {
            let x = random_windows(2, t, s);
            for kind in TransformKind::ALL {
                let mut a = x.clone();
                let mut b = x.clone();
                apply_transform(kind, &AugmentParams::default(), &mut a, t, 3, &mut seed::rng_from(s)).unwrap();
                apply_transform(kind, &AugmentParams::default(), &mut b, t, 3, &mut seed::rng_from(s)).unwrap();
                prop_assert_eq!(a.len(), x.len());
                prop_assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
                prop_assert!(a.iter().all(|v| v.is_finite()));
            }
        }

        #[test]
        fn warp_map_is_strictly_increasing(s in any::<u64>(), t in 2usize..300, knots in 1usize..8, sigma in 0.01f64..2.0) {
            let m = time_warp_map(t, knots, sigma, &mut seed::rng_from(s));
            prop_assert_eq!(m.len(), t);
            prop_assert_eq!(m[0], 0.0);
            prop_assert!((m[t - 1] - (t - 1) as f64).abs() < 1e-9);
            prop_assert!(m.windows(2).all(|w| w[1] > w[0]));
        }

        #[test]
        fn permute_moves_whole_segments(s in any::<u64>(), t in 4usize..50) {
            let x: Vec<f64> = (0..t * 3).map(|v| v as f64).collect();
            let mut y = x.clone();
            apply_window(TransformKind::Permute, &AugmentParams::default(), &mut y, t, 3, &mut seed::rng_from(s)).unwrap();
            let mut sorted = y.clone();
            sorted.sort_by(f64::total_cmp);
            prop_assert_eq!(sorted, x);
        }
    }

    #[test]
    fn single_segment_permute_is_identity() {
        let x = random_windows(2, 30, 5);
        let mut y = x.clone();
        let params = AugmentParams {
            permute_segments: 1,
            ..AugmentParams::default()
        };
        apply_transform(TransformKind::Permute, &params, &mut y, 30, 3, &mut seed::rng_from(1)).unwrap();
        assert_eq!(y, x);
        assert!(params.validate().is_err());
    }

    #[test]
    fn spline_interpolates_knots_and_lines() {
        let xs = [0.0, 1.0, 2.5, 4.0];
        let ys = [1.0, -1.0, 2.0, 0.5];
        let at = natural_cubic_spline(&xs, &ys, &xs);
        for (a, b) in at.iter().zip(&ys) {
            assert!((a - b).abs() < 1e-12);
        }
        let line = natural_cubic_spline(&xs, &[0.0, 2.0, 5.0, 8.0], &[0.5, 3.0]);
        assert!((line[0] - 1.0).abs() < 1e-12 && (line[1] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn pools_have_expected_sizes() {
        assert_eq!(TransformKind::simclr_pool().len(), 7);
        assert!(!TransformKind::simclr_pool().contains(&TransformKind::Permute));
        assert_eq!(ordered_pairs(&TransformKind::simclr_pool()).len(), 42);
        assert_eq!(ordered_pairs(&TransformKind::multitask_pool()).len(), 56);
    }

    #[test]
    fn cursor_visits_every_pair_once_per_cycle() {
        let pool = TransformKind::simclr_pool();
        let mut c = PairCursor::new(&pool, 11).unwrap();
        for _ in 0..3 {
            let cycle: Vec<_> = (0..42).map(|_| c.next_pair()).collect();
            let set: HashSet<_> = cycle.iter().copied().collect();
            assert_eq!(set.len(), 42);
            assert!(cycle.iter().all(|(a, b)| a != b));
        }
    }

    #[test]
    fn two_kind_pool_alternates() {
        let pool = [TransformKind::Negate, TransformKind::TimeFlip];
        let mut c = PairCursor::new(&pool, 0).unwrap();
        for _ in 0..5 {
            let a = c.next_pair();
            let b = c.next_pair();
            assert_ne!(a, b);
            assert_eq!((a.0, a.1), (b.1, b.0));
        }
        assert!(PairCursor::new(&[TransformKind::Negate], 0).is_err());
        assert!(PairCursor::new(&[], 0).is_err());
    }

    #[test]
    fn cursor_resume() {
        let pool = TransformKind::simclr_pool();
        let mut a = PairCursor::new(&pool, 3).unwrap();
        for _ in 0..50 {
            a.next_pair();
        }
        let mut w = Writer::new();
        a.write(&mut w);
        let bytes = w.into_bytes();
        let mut b = PairCursor::new(&pool, 3).unwrap();
        b.read_position(&mut Reader::new(&bytes)).unwrap();
        for _ in 0..100 {
            assert_eq!(a.next_pair(), b.next_pair());
        }
    }

    #[test]
    fn names_round_trip() {
        for k in TransformKind::ALL {
            assert_eq!(k.name().parse::<TransformKind>().unwrap(), k);
        }
        assert!("permutation".parse::<TransformKind>().is_err());
    }
}
