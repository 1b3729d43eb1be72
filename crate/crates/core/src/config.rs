//! Experiment configuration: TOML schema, validation with field paths,
//! normalization, hashing and the bundled presets.
//!
//! Validation happens in three passes so that every problem is reported at
//! once: the user document is walked against the fully defaulted document
//! (unknown keys, wrong types, negative counts), the result is merged over
//! the defaults and deserialized, and finally cross-field rules are checked.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::error::{HarError, Result};
use crate::forest::ForestParams;
use crate::nn::{LrSchedule, OptimizerKind, Padding};
use crate::seed;
use crate::ssl::{EncoderConfig, PretextConfig, PretextTask, TrainSettings};
use crate::augment::{AugmentParams, TransformKind};
use crate::features::FeatureSchema;
use crate::windowing::{BoundaryMode, LabelPolicy, WindowParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineKind {
    EcdfRf,
    StatisticalRf,
    SupervisedConv,
    /// Pretext training followed by classifier evaluation of the encoder.
    Pretrain,
    /// Classifier evaluation of an existing pretext checkpoint.
    EvalPretrained,
}

impl PipelineKind {
    pub fn name(self) -> &'static str {
        match self {
            PipelineKind::EcdfRf => "ecdf_rf",
            PipelineKind::StatisticalRf => "statistical_rf",
            PipelineKind::SupervisedConv => "supervised_conv",
            PipelineKind::Pretrain => "pretrain",
            PipelineKind::EvalPretrained => "eval_pretrained",
        }
    }

    pub fn uses_forest(self) -> bool {
        matches!(self, PipelineKind::EcdfRf | PipelineKind::StatisticalRf)
    }
}

/// `deterministic` runs every kernel sequentially; `fast` lets the
/// convolution layers spread a batch over threads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutionMode {
    #[default]
    Deterministic,
    Fast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub test_frac: f64,
    /// Fraction of the non-test subjects used for validation.
    pub val_frac: f64,
    /// Overrides the split stream derived from the global seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowingConfig {
    /// Samples per window.
    pub win_len: usize,
    /// Samples between window starts.
    pub step: usize,
    pub label_policy: LabelPolicy,
    pub boundary: BoundaryMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub n_quantiles: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub hidden: usize,
    /// Keep pretrained encoder weights fixed during evaluation.
    pub frozen: bool,
    /// Pretext checkpoint evaluated by `eval_pretrained`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    pub train: TrainSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub task: PretextTask,
    pub temperature: f64,
    pub projection: Vec<usize>,
    pub discriminator_hidden: usize,
    pub pool: Vec<TransformKind>,
    pub train: TrainSettings,
}

impl PretrainConfig {
    pub fn pretext(&self) -> PretextConfig {
        PretextConfig {
            task: self.task,
            temperature: self.temperature,
            projection: self.projection.clone(),
            discriminator_hidden: self.discriminator_hidden,
            pool: self.pool.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub sample_rate_hz: f64,
    pub pipeline: PipelineKind,
    pub mode: ExecutionMode,
    pub split: SplitConfig,
    pub windowing: WindowingConfig,
    pub features: FeatureConfig,
    pub forest: ForestParams,
    pub model: EncoderConfig,
    pub classifier: ClassifierConfig,
    pub pretrain: PretrainConfig,
    pub augment: AugmentParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::new(),
            output_dir: PathBuf::from("runs"),
            seed: 0,
            sample_rate_hz: crate::data::DEFAULT_SAMPLE_RATE_HZ,
            pipeline: PipelineKind::EcdfRf,
            mode: ExecutionMode::Deterministic,
            split: SplitConfig {
                test_frac: 0.2,
                val_frac: 0.2,
                seed: None,
            },
            windowing: WindowingConfig {
                win_len: 100,
                step: 50,
                label_policy: LabelPolicy::Last,
                boundary: BoundaryMode::Keep,
            },
            features: FeatureConfig { n_quantiles: 25 },
            forest: ForestParams::default(),
            model: EncoderConfig::default(),
            classifier: ClassifierConfig {
                hidden: 1024,
                frozen: true,
                checkpoint: None,
                train: TrainSettings {
                    epochs: 50,
                    batch_size: 256,
                    optimizer: OptimizerKind::Adamw,
                    learning_rate: 1e-4,
                    weight_decay: 1e-4,
                    momentum: 0.9,
                    schedule: LrSchedule::Step { gamma: 0.8, every: 10 },
                },
            },
            pretrain: PretrainConfig {
                task: PretextTask::Simclr,
                temperature: 0.1,
                projection: vec![256, 128, 50],
                discriminator_hidden: 256,
                pool: Vec::new(),
                train: TrainSettings {
                    epochs: 50,
                    batch_size: 1024,
                    optimizer: OptimizerKind::Sgd,
                    learning_rate: 1e-3,
                    weight_decay: 1e-5,
                    momentum: 0.9,
                    schedule: LrSchedule::Cosine { t_max: 50 },
                },
            },
            augment: AugmentParams::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn window_params(&self) -> WindowParams {
        WindowParams {
            win_len: self.windowing.win_len,
            step: self.windowing.step,
            label_policy: self.windowing.label_policy,
            boundary: self.windowing.boundary,
        }
    }

    /// Feature schema of the forest pipelines; other pipelines get ECDF.
    pub fn feature_schema(&self) -> FeatureSchema {
        match self.pipeline {
            PipelineKind::StatisticalRf => FeatureSchema::Statistical,
            _ => FeatureSchema::Ecdf {
                n_quantiles: self.features.n_quantiles,
            },
        }
    }

    pub fn split_seed(&self) -> u64 {
        self.split
            .seed
            .unwrap_or_else(|| seed::derive_seed(self.seed, "split", 0))
    }

    pub fn parallel(&self) -> bool {
        self.mode == ExecutionMode::Fast
    }

    /// Canonical TOML text with every default spelled out.
    pub fn normalize(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// First 16 hex digits of the SHA-256 of the normalized config. The
    /// output directory and the execution mode do not change results and are
    /// left out.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.mode = ExecutionMode::default();
        let digest = Sha256::digest(c.normalize().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Cross-field checks on an already well-typed config.
    pub fn check(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.dataset.as_os_str().is_empty() {
            errs.push("dataset: required (path to the recordings directory)".to_string());
        }
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            errs.push(format!("sample_rate_hz: must be positive, got {}", self.sample_rate_hz));
        }
        let s = &self.split;
        if !(s.test_frac > 0.0 && s.test_frac < 1.0) {
            errs.push(format!("split.test_frac: must be in (0, 1), got {}", s.test_frac));
        }
        if !(s.val_frac > 0.0 && s.val_frac < 1.0) {
            errs.push(format!("split.val_frac: must be in (0, 1), got {}", s.val_frac));
        }
        let w = &self.windowing;
        if w.win_len == 0 {
            errs.push("windowing.win_len: must be at least 1".to_string());
        }
        if w.step == 0 {
            errs.push("windowing.step: must be at least 1".to_string());
        } else if w.step > w.win_len {
            errs.push(format!(
                "windowing.step: must not exceed win_len ({} > {})",
                w.step, w.win_len
            ));
        }
        if self.features.n_quantiles == 0 {
            errs.push("features.n_quantiles: must be at least 1".to_string());
        }
        if self.forest.n_trees == 0 {
            errs.push("forest.n_trees: must be at least 1".to_string());
        }
        if self.forest.min_samples_split < 2 {
            errs.push(format!(
                "forest.min_samples_split: must be at least 2, got {}",
                self.forest.min_samples_split
            ));
        }
        nested("model", self.model.validate(), &mut errs);
        let conv = !self.pipeline.uses_forest();
        if conv && self.model.validate().is_ok() {
            let padding = match self.pipeline {
                PipelineKind::Pretrain | PipelineKind::EvalPretrained => self.pretrain.task.encoder_padding(),
                _ => Padding::Valid,
            };
            // the classifier always sees the encoder output, so a valid-padding
            // stack needs enough timesteps to leave at least one
            if padding == Padding::Valid && w.win_len < self.model.min_window() {
                errs.push(format!(
                    "windowing.win_len: the encoder needs at least {} samples, got {}",
                    self.model.min_window(),
                    w.win_len
                ));
            }
        }
        if self.classifier.hidden == 0 {
            errs.push("classifier.hidden: must be at least 1".to_string());
        }
        nested("classifier.train", self.classifier.train.validate(), &mut errs);
        nested("pretrain", self.pretrain.pretext().validate(), &mut errs);
        nested("pretrain.train", self.pretrain.train.validate(), &mut errs);
        nested("augment", self.augment.validate(), &mut errs);
        if self.pipeline == PipelineKind::EvalPretrained && self.classifier.checkpoint.is_none() {
            errs.push("classifier.checkpoint: required by the eval_pretrained pipeline".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(HarError::Config(errs))
        }
    }
}

fn nested(prefix: &str, r: Result<()>, errs: &mut Vec<String>) {
    match r {
        Ok(()) => {}
        Err(HarError::Config(list)) => errs.extend(list.into_iter().map(|e| format!("{prefix}.{e}"))),
        Err(e) => errs.push(format!("{prefix}: {e}")),
    }
}

/// Command-line values that replace the corresponding config keys before
/// validation.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub dataset: Option<PathBuf>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub mode: Option<ExecutionMode>,
}

impl Overrides {
    fn apply(&self, t: &mut Table) -> Result<()> {
        let path_str = |p: &Path| Value::String(p.to_string_lossy().into_owned());
        if let Some(d) = &self.dataset {
            t.insert("dataset".into(), path_str(d));
        }
        if let Some(o) = &self.output_dir {
            t.insert("output_dir".into(), path_str(o));
        }
        if let Some(s) = self.seed {
            let s = i64::try_from(s).map_err(|_| HarError::config(format!("seed: {s} exceeds the supported range")))?;
            t.insert("seed".into(), Value::Integer(s));
        }
        if let Some(m) = self.mode {
            let name = match m {
                ExecutionMode::Deterministic => "deterministic",
                ExecutionMode::Fast => "fast",
            };
            t.insert("mode".into(), Value::String(name.into()));
        }
        Ok(())
    }
}

/// Bundled experiment recipes, selectable by name with `--config`.
pub const PRESETS: [(&str, &str); 6] = [
    ("ecdf_motionsense", include_str!("../presets/ecdf_motionsense.toml")),
    ("statistical_rf", include_str!("../presets/statistical_rf.toml")),
    ("supervised_conv", include_str!("../presets/supervised_conv.toml")),
    ("supervised_conv_smoke", include_str!("../presets/supervised_conv_smoke.toml")),
    ("simclr_motionsense", include_str!("../presets/simclr_motionsense.toml")),
    ("simclr_reduced", include_str!("../presets/simclr_reduced.toml")),
];

pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

/// Read `source` as a preset name or a TOML file, apply `overrides` and
/// validate.
pub fn load(source: &str, overrides: &Overrides) -> Result<ExperimentConfig> {
    let text = match preset(source) {
        Some(text) => text.to_string(),
        None => {
            let path = Path::new(source);
            if !path.exists() {
                let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
                return Err(HarError::config(format!(
                    "config '{source}' is neither a file nor a preset ({})",
                    names.join(", ")
                )));
            }
            std::fs::read_to_string(path).map_err(|e| HarError::io(path, e))?
        }
    };
    parse_with(&text, overrides)
}

/// Validate a config file: every problem is reported, each prefixed with
/// its field path.
pub fn validate_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| HarError::io(path, e))?;
    parse(&text)
}

pub fn parse(text: &str) -> Result<ExperimentConfig> {
    parse_with(text, &Overrides::default())
}

pub fn parse_with(text: &str, overrides: &Overrides) -> Result<ExperimentConfig> {
    let mut user: Table = text
        .parse()
        .map_err(|e: toml::de::Error| HarError::config(format!("TOML syntax: {}", e.message().trim())))?;
    overrides.apply(&mut user)?;

    let defaults = Value::try_from(ExperimentConfig::default()).expect("defaults serialize");
    let Value::Table(mut defaults) = defaults else {
        unreachable!("config serializes to a table")
    };
    let exemplar = exemplar(&defaults);
    let mut errs = Vec::new();
    walk(&mut user, &exemplar, "", &mut errs);
    if !errs.is_empty() {
        return Err(HarError::Config(errs));
    }
    merge(&mut defaults, user);
    let cfg: ExperimentConfig = Value::Table(defaults)
        .try_into()
        .map_err(|e: toml::de::Error| HarError::config(e.message().trim().to_string()))?;
    cfg.check()?;
    Ok(cfg)
}

/// Defaults plus the keys that are absent from the serialized defaults
/// (optional fields and the parameters of other schedule kinds).
fn exemplar(defaults: &Table) -> Table {
    let mut ex = defaults.clone();
    set_at(&mut ex, &["split"], "seed", Value::Integer(0));
    set_at(&mut ex, &["forest"], "max_depth", Value::Integer(0));
    set_at(&mut ex, &["classifier"], "checkpoint", Value::String(String::new()));
    for section in ["classifier", "pretrain"] {
        let mut s = Table::new();
        s.insert("kind".into(), Value::String(String::new()));
        s.insert("gamma".into(), Value::Float(0.0));
        s.insert("every".into(), Value::Integer(0));
        s.insert("t_max".into(), Value::Integer(0));
        set_at(&mut ex, &[section, "train"], "schedule", Value::Table(s));
    }
    ex
}

fn set_at(t: &mut Table, path: &[&str], key: &str, v: Value) {
    match path.split_first() {
        None => {
            t.insert(key.to_string(), v);
        }
        Some((head, rest)) => {
            if let Some(Value::Table(inner)) = t.get_mut(*head) {
                set_at(inner, rest, key, v);
            }
        }
    }
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::String(_) => "a string",
        Value::Integer(_) => "an integer",
        Value::Float(_) => "a float",
        Value::Boolean(_) => "a boolean",
        Value::Datetime(_) => "a datetime",
        Value::Array(_) => "an array",
        Value::Table(_) => "a table",
    }
}

/// Allowed spellings of the enumerated string fields, by key name.
fn choices(key: &str) -> Option<&'static [&'static str]> {
    Some(match key {
        "pipeline" => &["ecdf_rf", "statistical_rf", "supervised_conv", "pretrain", "eval_pretrained"],
        "mode" => &["deterministic", "fast"],
        "label_policy" => &["last", "majority", "first"],
        "boundary" => &["keep", "discard"],
        "task" => &["autoencoder", "masked", "multitask", "simclr"],
        "optimizer" => &["sgd", "adam", "adamw"],
        "kind" => &["constant", "step", "cosine"],
        "pool" => &[
            "jitter",
            "scale",
            "rotate3d",
            "negate",
            "time_flip",
            "channel_shuffle",
            "permute",
            "time_warp",
        ],
        _ => return None,
    })
}

fn suggest<'a>(key: &str, candidates: impl Iterator<Item = &'a String>) -> Option<&'a String> {
    candidates
        .map(|c| (strsim::damerau_levenshtein(key, c), c))
        .filter(|(d, c)| *d <= 2.max(c.len() / 3))
        .min_by_key(|(d, _)| *d)
        .map(|(_, c)| c)
}

fn check_choice(key: &str, v: &str, full: &str, errs: &mut Vec<String>) {
    if let Some(allowed) = choices(key) {
        if !allowed.contains(&v) {
            errs.push(format!("{full}: expected one of {}, got \"{v}\"", allowed.join(", ")));
        }
    }
}

fn walk(user: &mut Table, ex: &Table, path: &str, errs: &mut Vec<String>) {
    for (key, v) in user.iter_mut() {
        let full = join(path, key);
        let Some(e) = ex.get(key) else {
            match suggest(key, ex.keys()) {
                Some(s) => errs.push(format!("{full}: unknown key (did you mean \"{s}\"?)")),
                None => errs.push(format!("{full}: unknown key")),
            }
            continue;
        };
        if full.ends_with("forest.max_features") {
            match v {
                Value::String(s) if s == "sqrt" || s == "all" => {}
                Value::Integer(n) if *n >= 1 => {}
                other => errs.push(format!(
                    "{full}: expected \"sqrt\", \"all\" or a positive integer, got {}",
                    describe(other)
                )),
            }
            continue;
        }
        check_value(key, v, e, &full, errs);
        if key == "schedule" {
            if let Value::Table(t) = v {
                check_schedule(t, &full, errs);
            }
        }
    }
}

fn describe(v: &Value) -> String {
    match v {
        Value::String(s) => format!("\"{s}\""),
        Value::Table(_) | Value::Array(_) => type_name(v).to_string(),
        other => other.to_string(),
    }
}

fn check_value(key: &str, v: &mut Value, e: &Value, full: &str, errs: &mut Vec<String>) {
    match (e, &mut *v) {
        (Value::Table(et), Value::Table(ut)) => walk(ut, et, full, errs),
        (Value::Integer(_), Value::Integer(n)) if *n < 0 => {
            errs.push(format!("{full}: expected a non-negative integer, got {n}"))
        }
        (Value::Integer(_), Value::Integer(_)) => {}
        (Value::Float(_), Value::Float(_)) => {}
        (Value::Float(_), Value::Integer(n)) => *v = Value::Float(*n as f64),
        (Value::String(_), Value::String(s)) => check_choice(key, s, full, errs),
        (Value::Boolean(_), Value::Boolean(_)) => {}
        (Value::Array(ea), Value::Array(ua)) => {
            for (i, item) in ua.iter_mut().enumerate() {
                let item_path = format!("{full}[{i}]");
                match ea.first() {
                    Some(proto) => check_value(key, item, proto, &item_path, errs),
                    // the only list without a default element is the transform pool
                    None => match item {
                        Value::String(s) => check_choice(key, s, &item_path, errs),
                        other => errs.push(format!("{item_path}: expected a string, got {}", type_name(other))),
                    },
                }
            }
        }
        (expected, got) => {
            let want = match expected {
                Value::Integer(_) => "a non-negative integer",
                Value::Float(_) => "a number",
                other => type_name(other),
            };
            errs.push(format!("{full}: expected {want}, got {}", type_name(got)));
        }
    }
}

fn check_schedule(t: &Table, full: &str, errs: &mut Vec<String>) {
    let kind = match t.get("kind") {
        Some(Value::String(k)) => k.as_str(),
        Some(_) => return,
        None => {
            errs.push(format!("{full}.kind: required (constant, step or cosine)"));
            return;
        }
    };
    let (needed, allowed): (&[&str], &[&str]) = match kind {
        "constant" => (&[], &["kind"]),
        "step" => (&["gamma", "every"], &["kind", "gamma", "every"]),
        "cosine" => (&["t_max"], &["kind", "t_max"]),
        _ => return,
    };
    for k in t.keys() {
        if !allowed.contains(&k.as_str()) {
            errs.push(format!("{full}.{k}: not a parameter of the {kind} schedule"));
        }
    }
    for k in needed {
        if !t.contains_key(*k) {
            errs.push(format!("{full}.{k}: required by the {kind} schedule"));
        }
    }
}

/// Overlay `user` on `base`. Schedule tables are replaced as a whole since
/// their keys depend on the schedule kind.
fn merge(base: &mut Table, user: Table) {
    for (k, v) in user {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(u)) if k != "schedule" => merge(b, u),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
