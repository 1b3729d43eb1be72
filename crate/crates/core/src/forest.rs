//! Random forest classifier (CART trees with Gini impurity).
//!
//! Each tree is grown on a bootstrap resample drawn from its own generator,
//! seeded from `(seed, tree_index)`, so the fitted forest does not depend on
//! how trees are scheduled across threads. At every node the candidate
//! features are visited in a freshly shuffled order; the first `max_features`
//! are searched, and the search continues past that budget only while no
//! valid split has been found. Candidate thresholds are midpoints between
//! consecutive distinct values; samples with `x <= threshold` go left.
//! Equal impurities resolve to the lowest (feature, threshold) pair and
//! equal votes to the lowest class id.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{self, ArtifactHeader, Reader, Writer};
use crate::error::{HarError, Result};
use crate::seed::{self, Rng};

/// Candidate features per split. Written as `"sqrt"`, `"all"` or a count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "MaxFeaturesRepr", into = "MaxFeaturesRepr")]
pub enum MaxFeatures {
    /// `ceil(sqrt(d))`
    Sqrt,
    All,
    Fixed(usize),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum MaxFeaturesRepr {
    Name(String),
    Count(usize),
}

impl TryFrom<MaxFeaturesRepr> for MaxFeatures {
    type Error = String;

    fn try_from(r: MaxFeaturesRepr) -> std::result::Result<Self, String> {
        match r {
            MaxFeaturesRepr::Name(s) if s == "sqrt" => Ok(MaxFeatures::Sqrt),
            MaxFeaturesRepr::Name(s) if s == "all" => Ok(MaxFeatures::All),
            MaxFeaturesRepr::Name(s) => Err(format!("expected \"sqrt\", \"all\" or a count, got \"{s}\"")),
            MaxFeaturesRepr::Count(0) => Err("feature count must be at least 1".into()),
            MaxFeaturesRepr::Count(k) => Ok(MaxFeatures::Fixed(k)),
        }
    }
}

impl From<MaxFeatures> for MaxFeaturesRepr {
    fn from(m: MaxFeatures) -> Self {
        match m {
            MaxFeatures::Sqrt => MaxFeaturesRepr::Name("sqrt".into()),
            MaxFeatures::All => MaxFeaturesRepr::Name("all".into()),
            MaxFeatures::Fixed(k) => MaxFeaturesRepr::Count(k),
        }
    }
}

impl MaxFeatures {
    pub fn resolve(&self, d: usize) -> usize {
        match *self {
            MaxFeatures::Sqrt => (d as f64).sqrt().ceil() as usize,
            MaxFeatures::All => d,
            MaxFeatures::Fixed(k) => k,
        }
        .clamp(1, d.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` grows until leaves are pure.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: None,
            min_samples_split: 2,
            max_features: MaxFeatures::Sqrt,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        counts: Vec<u32>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
    pub n_features: usize,
    pub n_classes: usize,
}

/// Gini impurity of a class histogram.
pub fn gini(counts: &[u32], total: u32) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / t).powi(2)).sum::<f64>()
}

/// Size-weighted child impurity of a candidate split.
pub fn weighted_gini(left: &[u32], n_left: u32, right: &[u32], n_right: u32) -> f64 {
    let n = (n_left + n_right) as f64;
    n_left as f64 / n * gini(left, n_left) + n_right as f64 / n * gini(right, n_right)
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

impl Candidate {
    fn beats(&self, other: &Option<Candidate>) -> bool {
        match other {
            None => true,
            Some(o) => {
                self.impurity < o.impurity
                    || (self.impurity == o.impurity
                        && (self.feature, self.threshold) < (o.feature, o.threshold))
            }
        }
    }
}

struct Grower<'a> {
    x: &'a [f64],
    y: &'a [usize],
    d: usize,
    n_classes: usize,
    params: &'a ForestParams,
    mtry: usize,
    rng: Rng,
    nodes: Vec<Node>,
    order: Vec<usize>,
}

impl Grower<'_> {
    fn value(&self, i: usize, f: usize) -> f64 {
        self.x[i * self.d + f]
    }

    fn best_split_on(&mut self, samples: &[usize], f: usize, best: &mut Option<Candidate>) -> bool {
        self.order.clear();
        self.order.extend_from_slice(samples);
        let x = self.x;
        let d = self.d;
        self.order
            .sort_by(|&a, &b| x[a * d + f].total_cmp(&x[b * d + f]));
        let n = samples.len() as u32;
        let mut right = vec![0u32; self.n_classes];
        for &i in samples {
            right[self.y[i]] += 1;
        }
        let mut left = vec![0u32; self.n_classes];
        let mut found = false;
        for k in 0..self.order.len() - 1 {
            let i = self.order[k];
            left[self.y[i]] += 1;
            right[self.y[i]] -= 1;
            let a = self.value(i, f);
            let b = self.value(self.order[k + 1], f);
            if a == b {
                continue;
            }
            found = true;
            let mut threshold = 0.5 * (a + b);
            if threshold >= b || !threshold.is_finite() {
                threshold = a;
            }
            let n_left = k as u32 + 1;
            let cand = Candidate {
                feature: f,
                threshold,
                impurity: weighted_gini(&left, n_left, &right, n - n_left),
            };
            if cand.beats(best) {
                *best = Some(cand);
            }
        }
        found
    }

    fn leaf(&mut self, samples: &[usize]) -> usize {
        let mut counts = vec![0u32; self.n_classes];
        for &i in samples {
            counts[self.y[i]] += 1;
        }
        self.nodes.push(Node::Leaf { counts });
        self.nodes.len() - 1
    }

    fn grow(&mut self, samples: &[usize], depth: usize) -> usize {
        let first = self.y[samples[0]];
        let pure = samples.iter().all(|&i| self.y[i] == first);
        let depth_capped = self.params.max_depth.is_some_and(|m| depth >= m);
        if pure || samples.len() < self.params.min_samples_split || depth_capped {
            return self.leaf(samples);
        }

        let mut features: Vec<usize> = (0..self.d).collect();
        features.shuffle(&mut self.rng);
        let mut best = None;
        for (visited, &f) in features.iter().enumerate() {
            if visited >= self.mtry && best.is_some() {
                break;
            }
            self.best_split_on(samples, f, &mut best);
        }
        let Some(split) = best else {
            return self.leaf(samples);
        };

        let (l, r): (Vec<usize>, Vec<usize>) = samples
            .iter()
            .partition(|&&i| self.value(i, split.feature) <= split.threshold);
        debug_assert!(!l.is_empty() && !r.is_empty());

        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { counts: Vec::new() });
        let left = self.grow(&l, depth + 1);
        let right = self.grow(&r, depth + 1);
        self.nodes[id] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        id
    }
}

fn argmax_lowest(xs: impl Iterator<Item = u32>) -> usize {
    let mut best = (0usize, 0u32);
    for (i, v) in xs.enumerate() {
        if i == 0 || v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

impl DecisionTree {
    fn fit(
        x: &[f64],
        y: &[usize],
        d: usize,
        n_classes: usize,
        params: &ForestParams,
        mut rng: Rng,
    ) -> DecisionTree {
        let n = y.len();
        let samples: Vec<usize> = if params.bootstrap {
            (0..n).map(|_| rng.random_range(0..n)).collect()
        } else {
            (0..n).collect()
        };
        let mut g = Grower {
            x,
            y,
            d,
            n_classes,
            params,
            mtry: params.max_features.resolve(d),
            rng,
            nodes: Vec::new(),
            order: Vec::with_capacity(n),
        };
        g.grow(&samples, 0);
        DecisionTree {
            nodes: g.nodes,
            n_features: d,
            n_classes,
        }
    }

    pub fn leaf_for(&self, row: &[f64]) -> &[u32] {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => id = if row[*feature] <= *threshold { *left } else { *right },
                Node::Leaf { counts } => return counts,
            }
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> usize {
        argmax_lowest(self.leaf_for(row).iter().copied())
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], id: usize) -> usize {
            match &nodes[id] {
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }

    /// Split structure without leaf histograms: `(feature, threshold)` in
    /// node order, `None` for leaves.
    pub fn structure(&self) -> Vec<Option<(usize, u64)>> {
        self.nodes
            .iter()
            .map(|n| match n {
                Node::Split {
                    feature, threshold, ..
                } => Some((*feature, threshold.to_bits())),
                Node::Leaf { .. } => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub trees: Vec<DecisionTree>,
    pub params: ForestParams,
    pub seed: u64,
    pub n_features: usize,
    pub n_classes: usize,
}

/// Class predictions plus per-class vote fractions (row-major `[n][classes]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub labels: Vec<usize>,
    pub votes: Vec<f64>,
    pub n_classes: usize,
}

/// Fit a forest on a row-major feature matrix with `n_features` columns.
pub fn fit_forest(
    x: &[f64],
    n_features: usize,
    labels: &[usize],
    params: &ForestParams,
    seed: u64,
) -> Result<Forest> {
    if n_features == 0 || x.len() != labels.len() * n_features {
        return Err(HarError::Shape(format!(
            "feature matrix of {} values does not match {} rows x {n_features} columns",
            x.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(HarError::Data("degenerate training set: no samples".into()));
    }
    if params.n_trees == 0 {
        return Err(HarError::InvalidArgument("n_trees must be positive".into()));
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(HarError::Numeric(format!(
            "non-finite feature at row {}, column {}",
            i / n_features,
            i % n_features
        )));
    }
    let first = labels[0];
    if labels.iter().all(|&l| l == first) {
        return Err(HarError::Data(
            "degenerate training set: only one class present".into(),
        ));
    }
    let n_classes = labels.iter().max().unwrap() + 1;
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let rng = seed::substream(seed, "forest-tree", t as u64);
            DecisionTree::fit(x, labels, n_features, n_classes, params, rng)
        })
        .collect();
    Ok(Forest {
        trees,
        params: *params,
        seed,
        n_features,
        n_classes,
    })
}

pub const FOREST_KIND: &str = "random-forest";
pub const FOREST_VERSION: u32 = 1;

impl Forest {
    /// Majority vote of the trees for each row.
    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        if !x.len().is_multiple_of(self.n_features) {
            return Err(HarError::Shape(format!(
                "{} values is not a whole number of {}-feature rows",
                x.len(),
                self.n_features
            )));
        }
        let n = x.len() / self.n_features;
        let c = self.n_classes;
        let mut votes = vec![0.0; n * c];
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let row = &x[i * self.n_features..(i + 1) * self.n_features];
            let mut counts = vec![0u32; c];
            for t in &self.trees {
                counts[t.predict_row(row)] += 1;
            }
            for k in 0..c {
                votes[i * c + k] = counts[k] as f64 / self.trees.len() as f64;
            }
            labels.push(argmax_lowest(counts.into_iter()));
        }
        Ok(Prediction {
            labels,
            votes,
            n_classes: c,
        })
    }

    pub fn to_bytes(&self, header: &ArtifactHeader) -> Vec<u8> {
        let mut w = Writer::new();
        header.write(&mut w);
        w.usize(self.params.n_trees);
        w.usize(self.params.max_depth.map_or(0, |d| d + 1));
        w.usize(self.params.min_samples_split);
        match self.params.max_features {
            MaxFeatures::Sqrt => w.u8(0),
            MaxFeatures::All => w.u8(1),
            MaxFeatures::Fixed(k) => {
                w.u8(2);
                w.usize(k);
            }
        }
        w.bool(self.params.bootstrap);
        w.u64(self.seed);
        w.usize(self.n_features);
        w.usize(self.n_classes);
        w.usize(self.trees.len());
        for t in &self.trees {
            w.usize(t.nodes.len());
            for n in &t.nodes {
                match n {
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => {
                        w.u8(0);
                        w.usize(*feature);
                        w.f64(*threshold);
                        w.usize(*left);
                        w.usize(*right);
                    }
                    Node::Leaf { counts } => {
                        w.u8(1);
                        w.u32s(counts);
                    }
                }
            }
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(ArtifactHeader, Forest)> {
        let mut r = Reader::new(bytes);
        let header = ArtifactHeader::expect(&mut r, FOREST_KIND, FOREST_VERSION)?;
        let n_trees = r.usize()?;
        let max_depth = match r.usize()? {
            0 => None,
            d => Some(d - 1),
        };
        let min_samples_split = r.usize()?;
        let max_features = match r.u8()? {
            0 => MaxFeatures::Sqrt,
            1 => MaxFeatures::All,
            2 => MaxFeatures::Fixed(r.usize()?),
            b => return Err(HarError::Format(format!("bad max_features tag {b}"))),
        };
        let bootstrap = r.bool()?;
        let seed = r.u64()?;
        let n_features = r.usize()?;
        let n_classes = r.usize()?;
        let count = r.usize()?;
        let mut trees = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let nn = r.usize()?;
            let mut nodes = Vec::with_capacity(nn.min(1 << 20));
            for _ in 0..nn {
                nodes.push(match r.u8()? {
                    0 => Node::Split {
                        feature: r.usize()?,
                        threshold: r.f64()?,
                        left: r.usize()?,
                        right: r.usize()?,
                    },
                    1 => Node::Leaf { counts: r.u32s()? },
                    b => return Err(HarError::Format(format!("bad node tag {b}"))),
                });
            }
            for n in &nodes {
                if let Node::Split {
                    feature, left, right, ..
                } = n
                {
                    if *feature >= n_features || *left >= nn || *right >= nn {
                        return Err(HarError::Format("tree node index out of range".into()));
                    }
                }
            }
            trees.push(DecisionTree {
                nodes,
                n_features,
                n_classes,
            });
        }
        Ok((
            header,
            Forest {
                trees,
                params: ForestParams {
                    n_trees,
                    max_depth,
                    min_samples_split,
                    max_features,
                    bootstrap,
                },
                seed,
                n_features,
                n_classes,
            },
        ))
    }

    pub fn save(&self, path: &Path, header: &ArtifactHeader) -> Result<()> {
        codec::write_file(path, &self.to_bytes(header))
    }

    pub fn load(path: &Path) -> Result<(ArtifactHeader, Forest)> {
        Self::from_bytes(&codec::read_file(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single_tree() -> ForestParams {
        ForestParams {
            n_trees: 1,
            bootstrap: false,
            max_features: MaxFeatures::All,
            ..Default::default()
        }
    }

    /// Exhaustive search over every feature and every midpoint threshold.
    fn exhaustive_best(x: &[f64], d: usize, y: &[usize], samples: &[usize], c: usize) -> f64 {
        let mut best = f64::INFINITY;
        for f in 0..d {
            let mut vals: Vec<f64> = samples.iter().map(|&i| x[i * d + f]).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            for w in vals.windows(2) {
                let thr = 0.5 * (w[0] + w[1]);
                let (mut l, mut r) = (vec![0u32; c], vec![0u32; c]);
                for &i in samples {
                    if x[i * d + f] <= thr {
                        l[y[i]] += 1;
                    } else {
                        r[y[i]] += 1;
                    }
                }
                let (nl, nr) = (l.iter().sum(), r.iter().sum());
                best = best.min(weighted_gini(&l, nl, &r, nr));
            }
        }
        best
    }

    #[test]
    fn single_class_rejected() {
        let err = fit_forest(&[0.0, 1.0], 1, &[2, 2], &single_tree(), 0).unwrap_err();
        assert!(err.to_string().contains("degenerate training set"));
    }

    #[test]
    fn separable_toy_set_is_fit_exactly() {
        let x = [0.0, 1.0, 10.0];
        let y = [0, 0, 1];
        let f = fit_forest(&x, 1, &y, &single_tree(), 0).unwrap();
        // exhaustive oracle: thresholds 0.5 and 5.5; 5.5 separates perfectly
        assert_eq!(exhaustive_best(&x, 1, &y, &[0, 1, 2], 2), 0.0);
        assert_eq!(
            f.trees[0].nodes[0],
            Node::Split {
                feature: 0,
                threshold: 5.5,
                left: 1,
                right: 2
            }
        );
        assert_eq!(f.predict(&x).unwrap().labels, vec![0, 0, 1]);
    }

    #[test]
    fn same_seed_same_forest() {
        let x: Vec<f64> = (0..200).map(|i| ((i * 37) % 101) as f64).collect();
        let y: Vec<usize> = (0..100).map(|i| (x[2 * i] > 50.0) as usize + (x[2 * i + 1] > 70.0) as usize).collect();
        let p = ForestParams { n_trees: 10, ..Default::default() };
        let a = fit_forest(&x, 2, &y, &p, 9).unwrap();
        let b = fit_forest(&x, 2, &y, &p, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.predict(&x).unwrap(), b.predict(&x).unwrap());
    }

    #[test]
    fn identical_stumps_agree_with_the_stump() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [0, 0, 1, 1];
        let p = ForestParams { n_trees: 5, ..single_tree() };
        let f = fit_forest(&x, 1, &y, &p, 1).unwrap();
        assert!(f.trees.windows(2).all(|w| w[0] == w[1]));
        let pred = f.predict(&[0.2, 2.7]).unwrap();
        assert_eq!(pred.labels, vec![f.trees[0].predict_row(&[0.2]), f.trees[0].predict_row(&[2.7])]);
        assert_eq!(pred.votes, vec![1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn vote_ties_go_to_lowest_class() {
        let t0 = DecisionTree { nodes: vec![Node::Leaf { counts: vec![0, 3, 0] }], n_features: 1, n_classes: 3 };
        let t1 = DecisionTree { nodes: vec![Node::Leaf { counts: vec![0, 0, 3] }], n_features: 1, n_classes: 3 };
        let f = Forest { trees: vec![t1, t0], params: ForestParams::default(), seed: 0, n_features: 1, n_classes: 3 };
        assert_eq!(f.predict(&[0.0]).unwrap().labels, vec![1]);
    }

    #[test]
    fn schema_mismatch_rejected() {
        let f = fit_forest(&[0.0, 1.0, 2.0, 3.0], 2, &[0, 1], &single_tree(), 0).unwrap();
        assert!(f.predict(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn serialization_is_byte_stable() {
        let x: Vec<f64> = (0..90).map(|i| ((i * 7) % 13) as f64).collect();
        let y: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let f = fit_forest(&x, 3, &y, &ForestParams { n_trees: 4, ..Default::default() }, 5).unwrap();
        let h = ArtifactHeader::new(FOREST_KIND, FOREST_VERSION, "hash", 5);
        let bytes = f.to_bytes(&h);
        let (h2, back) = Forest::from_bytes(&bytes).unwrap();
        assert_eq!(h2, h);
        assert_eq!(back, f);
        assert_eq!(back.to_bytes(&h), bytes);
    }

    fn dataset() -> impl Strategy<Value = (Vec<f64>, Vec<usize>, usize)> {
        (1usize..4, 4usize..40).prop_flat_map(|(d, n)| {
            (
                proptest::collection::vec((0i32..6).prop_map(|v| v as f64), n * d),
                proptest::collection::vec(0usize..3, n),
                Just(d),
            )
        })
    }

    proptest! {
        #[test]
        fn unbootstrapped_tree_memorizes_consistent_data((x, y, d) in dataset()) {
            prop_assume!(y.iter().any(|&l| l != y[0]));
            let n = y.len();
            // drop rows whose feature vector repeats with a different label
            let consistent = (0..n).all(|i| (0..n).all(|j| x[i*d..(i+1)*d] != x[j*d..(j+1)*d] || y[i] == y[j]));
            prop_assume!(consistent);
            let f = fit_forest(&x, d, &y, &ForestParams { n_trees: 1, bootstrap: false, ..Default::default() }, 3).unwrap();
            prop_assert_eq!(f.predict(&x).unwrap().labels, y);
        }

        #[test]
        fn chosen_splits_are_optimal((x, y, d) in dataset()) {
            prop_assume!(y.iter().any(|&l| l != y[0]));
            let c = *y.iter().max().unwrap() + 1;
            let f = fit_forest(&x, d, &y, &single_tree(), 1).unwrap();
            let tree = &f.trees[0];
            // walk the tree, re-deriving each node's sample set
            let mut stack = vec![(0usize, (0..y.len()).collect::<Vec<_>>())];
            while let Some((id, samples)) = stack.pop() {
                if let Node::Split { feature, threshold, left, right } = &tree.nodes[id] {
                    let (l, r): (Vec<usize>, Vec<usize>) = samples.iter().partition(|&&i| x[i * d + feature] <= *threshold);
                    prop_assert!(!l.is_empty() && !r.is_empty());
                    let count = |s: &[usize]| { let mut h = vec![0u32; c]; for &i in s { h[y[i]] += 1; } h };
                    let chosen = weighted_gini(&count(&l), l.len() as u32, &count(&r), r.len() as u32);
                    let best = exhaustive_best(&x, d, &y, &samples, c);
                    prop_assert!(chosen <= best + 1e-12);
                    stack.push((*left, l));
                    stack.push((*right, r));
                } else if let Node::Leaf { counts } = &tree.nodes[id] {
                    prop_assert_eq!(counts.iter().sum::<u32>() as usize, samples.len());
                }
            }
        }

        #[test]
        fn duplicated_training_set_keeps_structure((x, y, d) in dataset()) {
            prop_assume!(y.iter().any(|&l| l != y[0]));
            let p = ForestParams { n_trees: 1, bootstrap: false, ..Default::default() };
            let a = fit_forest(&x, d, &y, &p, 11).unwrap();
            let x2: Vec<f64> = x.iter().chain(&x).copied().collect();
            let y2: Vec<usize> = y.iter().chain(&y).copied().collect();
            let b = fit_forest(&x2, d, &y2, &p, 11).unwrap();
            prop_assert_eq!(a.trees[0].structure(), b.trees[0].structure());
        }

        #[test]
        fn vote_fractions_sum_to_one((x, y, d) in dataset()) {
            prop_assume!(y.iter().any(|&l| l != y[0]));
            let f = fit_forest(&x, d, &y, &ForestParams { n_trees: 7, ..Default::default() }, 2).unwrap();
            let p = f.predict(&x).unwrap();
            for row in p.votes.chunks(p.n_classes) {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
