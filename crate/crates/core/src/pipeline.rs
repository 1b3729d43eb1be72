//! Stage runner behind the command-line front end.
//!
//! Every stage reads and writes artifacts under the configured output
//! directory. Artifacts carry the config hash, the global seed and the
//! toolkit version; a stage reuses an artifact only when its hash matches
//! the current config. One [`Workspace`] owns its directory through a lock
//! file for as long as it lives.

use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::{self, ArtifactHeader, Reader, Writer};
use crate::config::{ExperimentConfig, PipelineKind};
use crate::data::{class_names, load_dataset, PreparedDataset, PREPARED_KIND, PREPARED_VERSION};
use crate::error::{HarError, Result};
use crate::features::{extract_all, FeatureMatrix};
use crate::forest::{fit_forest, Forest, FOREST_KIND, FOREST_VERSION};
use crate::metrics::{write_jsonl, ConfusionMatrix, EpochRecord, SplitMetrics};
use crate::nn::Checkpoint;
use crate::seed;
use crate::ssl::classifier::{ClassifierOutcome, SUPERVISED_TAG};
use crate::ssl::pretrain::epoch_checkpoint_path;
use crate::ssl::{
    evaluate_with_classifier, pretrain, train_supervised, ClassifierOptions, LabeledSplits, PretrainOptions,
    UnlabeledWindows,
};
use crate::windowing::{segment_streams, WindowBatch};

/// Floating-point type of network training.
type Train = f32;

pub const CONFIG_FILE: &str = "config.toml";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOCK_FILE: &str = ".lock";
pub const PREPARED_FILE: &str = "prepared.bin";
pub const WINDOWS_FILE: &str = "windows.bin";
pub const FOREST_FILE: &str = "forest.bin";
pub const MODEL_FILE: &str = "model.ckpt";
pub const PRETRAINED_FILE: &str = "pretrained.ckpt";
pub const PRETRAIN_DIR: &str = "pretrain";
pub const REPORT_FILE: &str = "report.jsonl";
pub const PRETRAIN_REPORT_FILE: &str = "pretrain_report.jsonl";
pub const CONFUSION_FILE: &str = "confusion.csv";
pub const SUMMARY_FILE: &str = "summary.json";

const WINDOWS_KIND: &str = "windows";
const WINDOWS_VERSION: u32 = 1;

/// Record of what has been produced in an output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub pipeline: String,
    pub stages: Vec<String>,
    pub complete: bool,
}

/// Headline numbers of a finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub pipeline: String,
    /// Epoch whose test score is reported (best validation mean F1).
    pub best_epoch: usize,
    pub val_mean_f1: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub test_mean_f1: Option<f64>,
    pub windows: [usize; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitWindows {
    pub train: WindowBatch,
    pub val: WindowBatch,
    pub test: WindowBatch,
}

impl SplitWindows {
    fn counts(&self) -> [usize; 3] {
        [self.train.len(), self.val.len(), self.test.len()]
    }

    fn splits(&self) -> LabeledSplits<'_> {
        LabeledSplits {
            train: &self.train,
            val: &self.val,
            test: &self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Completed(Summary),
    /// The directory already held a complete run of the same config.
    UpToDate(Summary),
}

impl RunStatus {
    pub fn summary(&self) -> &Summary {
        match self {
            RunStatus::Completed(s) | RunStatus::UpToDate(s) => s,
        }
    }
}

struct Lock(PathBuf);

impl Lock {
    fn acquire(dir: &Path) -> Result<Lock> {
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                use std::io::Write;
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Lock(path))
            }
            Err(e) if e.kind() == ErrorKind::AlreadyExists => Err(HarError::InvalidArgument(format!(
                "{} is in use by another run (delete {} if no run is active)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(HarError::io(path, e)),
        }
    }
}

impl Drop for Lock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

/// An output directory bound to one config.
pub struct Workspace {
    cfg: ExperimentConfig,
    hash: String,
    dir: PathBuf,
    force: bool,
    manifest: Manifest,
    _lock: Lock,
}

impl Workspace {
    /// Lock the output directory of `cfg`. A directory holding results of a
    /// different config is refused unless `force` is set.
    pub fn open(cfg: ExperimentConfig, force: bool) -> Result<Workspace> {
        let dir = cfg.output_dir.clone();
        fs::create_dir_all(&dir).map_err(|e| HarError::io(&dir, e))?;
        let lock = Lock::acquire(&dir)?;
        let hash = cfg.hash();
        let fresh = Manifest {
            config_hash: hash.clone(),
            seed: cfg.seed,
            version: crate::VERSION.to_string(),
            pipeline: cfg.pipeline.name().to_string(),
            stages: Vec::new(),
            complete: false,
        };
        let manifest_path = dir.join(MANIFEST_FILE);
        let manifest = match read_json::<Manifest>(&manifest_path) {
            Ok(m) if m.config_hash == hash && !force => m,
            Ok(m) if m.config_hash != hash && !force => {
                return Err(HarError::config(format!(
                    "output_dir: {} holds results of config {}, this config is {hash}; pass --force to overwrite or choose another --output",
                    dir.display(),
                    m.config_hash
                )))
            }
            _ => fresh,
        };
        let ws = Workspace {
            cfg,
            hash,
            dir,
            force,
            manifest,
            _lock: lock,
        };
        codec::write_file(&ws.path(CONFIG_FILE), ws.cfg.normalize().as_bytes())?;
        ws.save_manifest()?;
        Ok(ws)
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn header(&self, kind: &str, version: u32) -> ArtifactHeader {
        ArtifactHeader::new(kind, version, &self.hash, self.cfg.seed)
    }

    fn provenance(&self) -> String {
        format!("config_hash={};seed={};version={}", self.hash, self.cfg.seed, crate::VERSION)
    }

    fn save_manifest(&self) -> Result<()> {
        write_json(&self.path(MANIFEST_FILE), &self.manifest)
    }

    fn mark(&mut self, stage: &str) -> Result<()> {
        if !self.manifest.stages.iter().any(|s| s == stage) {
            self.manifest.stages.push(stage.to_string());
        }
        self.save_manifest()
    }

    /// Whether `stage` already ran for this config. `--force` starts from an
    /// empty manifest, so within one invocation a stage still runs once.
    fn done(&self, stage: &str) -> bool {
        self.manifest.stages.iter().any(|s| s == stage)
    }

    /// Reuse an artifact if the manifest lists its stage and its header
    /// hash matches.
    fn reusable(&self, stage: &str, header: &ArtifactHeader) -> bool {
        self.done(stage) && header.config_hash == self.hash && header.seed == self.cfg.seed
    }

    /// Load the recordings, split subjects and normalize with train
    /// statistics.
    pub fn prepare(&mut self) -> Result<PreparedDataset> {
        let path = self.path(PREPARED_FILE);
        if let Ok((h, p)) = PreparedDataset::load(&path) {
            if self.reusable("prepare", &h) {
                return Ok(p);
            }
        }
        let streams = load_dataset(&self.cfg.dataset, self.cfg.sample_rate_hz)?;
        let s = &self.cfg.split;
        let prepared = PreparedDataset::build(&streams, s.test_frac, s.val_frac, self.cfg.split_seed())?;
        let (tr, va, te) = prepared.split.sizes();
        log::info!("prepared {} subjects: train {tr}, val {va}, test {te}", streams.len());
        prepared.save(&path, &self.header(PREPARED_KIND, PREPARED_VERSION))?;
        self.mark("prepare")?;
        Ok(prepared)
    }

    /// Cut every split into labeled windows.
    pub fn segment(&mut self) -> Result<SplitWindows> {
        let path = self.path(WINDOWS_FILE);
        if let Ok(bytes) = codec::read_file(&path) {
            if let Ok((h, w)) = decode_windows(&bytes) {
                if self.reusable("segment", &h) {
                    return Ok(w);
                }
            }
        }
        let prepared = self.prepare()?;
        let params = self.cfg.window_params();
        params.validate()?;
        let windows = SplitWindows {
            train: segment_streams(&prepared.train, &params)?,
            val: segment_streams(&prepared.val, &params)?,
            test: segment_streams(&prepared.test, &params)?,
        };
        if windows.train.is_empty() {
            return Err(HarError::Data(format!(
                "no training windows of {} samples; recordings are too short",
                params.win_len
            )));
        }
        let [tr, va, te] = windows.counts();
        log::info!("windows: train {tr}, val {va}, test {te}");
        let mut w = Writer::new();
        self.header(WINDOWS_KIND, WINDOWS_VERSION).write(&mut w);
        windows.train.write(&mut w);
        windows.val.write(&mut w);
        windows.test.write(&mut w);
        codec::write_file(&path, &w.into_bytes())?;
        self.mark("segment")?;
        Ok(windows)
    }

    /// Feature matrices of the three splits, also written as CSV.
    pub fn features(&mut self) -> Result<[FeatureMatrix; 3]> {
        let windows = self.segment()?;
        let schema = self.cfg.feature_schema();
        let prov = self.provenance();
        let mut out = Vec::with_capacity(3);
        for (name, b) in [("train", &windows.train), ("val", &windows.val), ("test", &windows.test)] {
            let m = extract_all(b, schema)?;
            m.write_csv(&self.path(&format!("features/{name}.csv")), &prov)?;
            out.push(m);
        }
        self.mark("features")?;
        Ok(out.try_into().expect("three splits"))
    }

    /// Fit the random forest on training features and score all splits.
    pub fn train_rf(&mut self) -> Result<Summary> {
        if self.done("train-rf") {
            if let Ok(s) = self.load_summary() {
                return Ok(s);
            }
        }
        let [train, val, test] = self.features()?;
        let labels: Vec<usize> = train.labels.iter().map(|&l| l as usize).collect();
        let forest = fit_forest(
            &train.values,
            train.dim,
            &labels,
            &self.cfg.forest,
            seed::derive_seed(self.cfg.seed, "forest", 0),
        )?;
        forest.save(&self.path(FOREST_FILE), &self.header(FOREST_KIND, FOREST_VERSION))?;
        let mut records = Vec::new();
        let mut scores = Vec::new();
        let mut test_cm = ConfusionMatrix::new(class_names());
        for (name, m) in [("train", &train), ("val", &val), ("test", &test)] {
            let (metrics, cm) = score_forest(&forest, m)?;
            records.push(self.record(0, name, &metrics));
            scores.push(metrics);
            if name == "test" {
                test_cm = cm;
            }
        }
        write_jsonl(&self.path(REPORT_FILE), &records)?;
        codec::write_file(&self.path(CONFUSION_FILE), test_cm.to_csv().as_bytes())?;
        let summary = Summary {
            config_hash: self.hash.clone(),
            seed: self.cfg.seed,
            version: crate::VERSION.to_string(),
            pipeline: self.cfg.pipeline.name().to_string(),
            best_epoch: 0,
            val_mean_f1: scores[1].mean_f1.map(crate::metrics::round4),
            test_accuracy: scores[2].accuracy.map(crate::metrics::round4),
            test_mean_f1: scores[2].mean_f1.map(crate::metrics::round4),
            windows: [train.rows(), val.rows(), test.rows()],
        };
        write_json(&self.path(SUMMARY_FILE), &summary)?;
        self.mark("train-rf")?;
        Ok(summary)
    }

    fn classifier_options(&self, task_tag: &str) -> ClassifierOptions {
        ClassifierOptions {
            settings: self.cfg.classifier.train.clone(),
            hidden: self.cfg.classifier.hidden,
            seed: self.cfg.seed,
            config_hash: self.hash.clone(),
            parallel: self.cfg.parallel(),
            task_tag: task_tag.to_string(),
        }
    }

    /// Train the convolutional classifier from scratch.
    pub fn train_supervised(&mut self) -> Result<Summary> {
        if self.done("train-supervised") {
            if let Ok(s) = self.load_summary() {
                return Ok(s);
            }
        }
        let windows = self.segment()?;
        let opts = self.classifier_options(SUPERVISED_TAG);
        let outcome = train_supervised::<Train>(&self.cfg.model, class_names().len(), windows.splits(), &opts)?;
        let summary = self.finish_classifier(&outcome, windows.counts())?;
        self.mark("train-supervised")?;
        Ok(summary)
    }

    /// Pretext training on the unlabeled training windows. Per-epoch
    /// checkpoints under `pretrain/` let an interrupted run continue where
    /// it stopped.
    pub fn pretrain(&mut self) -> Result<Checkpoint> {
        let final_path = self.path(PRETRAINED_FILE);
        if self.done("pretrain") {
            if let Ok(ck) = Checkpoint::load(&final_path) {
                if ck.header.config_hash == self.hash {
                    return Ok(ck);
                }
            }
        }
        let windows = self.segment()?;
        let ckpt_dir = self.path(PRETRAIN_DIR);
        if self.force && ckpt_dir.exists() {
            fs::remove_dir_all(&ckpt_dir).map_err(|e| HarError::io(&ckpt_dir, e))?;
        }
        let resume = self.latest_pretrain_checkpoint(&ckpt_dir);
        if let Some(ck) = &resume {
            log::info!("resuming pretraining after epoch {}", ck.epoch);
        }
        let train = UnlabeledWindows::from_batch(&windows.train);
        let val = UnlabeledWindows::from_batch(&windows.val);
        let opts = PretrainOptions {
            seed: self.cfg.seed,
            config_hash: self.hash.clone(),
            parallel: self.cfg.parallel(),
            checkpoint_dir: Some(ckpt_dir),
        };
        let p = &self.cfg.pretrain;
        let outcome = pretrain::<Train>(
            &p.pretext(),
            &self.cfg.model,
            &self.cfg.augment,
            &p.train,
            &train,
            Some(&val),
            &opts,
            resume.as_ref(),
        )?;
        let mut records = Vec::new();
        for h in &outcome.history {
            let m = |loss| SplitMetrics {
                loss,
                accuracy: None,
                mean_f1: None,
            };
            records.push(self.record(h.epoch, "pretext_train", &m(Some(h.train_loss))));
            if h.val_loss.is_some() {
                records.push(self.record(h.epoch, "pretext_val", &m(h.val_loss)));
            }
        }
        write_jsonl(&self.path(PRETRAIN_REPORT_FILE), &records)?;
        outcome.checkpoint.save(&final_path)?;
        self.mark("pretrain")?;
        Ok(outcome.checkpoint)
    }

    fn latest_pretrain_checkpoint(&self, dir: &Path) -> Option<Checkpoint> {
        let epochs = self.cfg.pretrain.train.epochs;
        (1..=epochs).rev().find_map(|e| {
            let ck = Checkpoint::load(&epoch_checkpoint_path(dir, e)).ok()?;
            (ck.header.config_hash == self.hash && ck.epoch == e).then_some(ck)
        })
    }

    /// Train a classifier on top of a pretrained encoder: the checkpoint
    /// named in the config for `eval_pretrained`, otherwise this
    /// directory's own pretraining result.
    pub fn evaluate(&mut self) -> Result<Summary> {
        if self.done("evaluate") {
            if let Ok(s) = self.load_summary() {
                return Ok(s);
            }
        }
        let ckpt = match (&self.cfg.pipeline, &self.cfg.classifier.checkpoint) {
            (PipelineKind::EvalPretrained, Some(p)) => Checkpoint::load(p)?,
            (PipelineKind::EvalPretrained, None) => {
                return Err(HarError::config(
                    "classifier.checkpoint: required by the eval_pretrained pipeline",
                ))
            }
            _ => self.pretrain()?,
        };
        let windows = self.segment()?;
        let opts = self.classifier_options(&format!("{}-eval", ckpt.task));
        let outcome = evaluate_with_classifier::<Train>(
            &ckpt,
            self.cfg.classifier.frozen,
            &self.cfg.model,
            class_names().len(),
            windows.splits(),
            &opts,
        )?;
        let summary = self.finish_classifier(&outcome, windows.counts())?;
        self.mark("evaluate")?;
        Ok(summary)
    }

    fn finish_classifier(&self, outcome: &ClassifierOutcome, windows: [usize; 3]) -> Result<Summary> {
        outcome.checkpoint.save(&self.path(MODEL_FILE))?;
        let mut records = Vec::new();
        for e in &outcome.history {
            for (name, m) in [("train", &e.train), ("val", &e.val), ("test", &e.test)] {
                records.push(self.record(e.epoch, name, m));
            }
        }
        write_jsonl(&self.path(REPORT_FILE), &records)?;
        codec::write_file(&self.path(CONFUSION_FILE), outcome.test_confusion.to_csv().as_bytes())?;
        let best = outcome.best();
        let summary = Summary {
            config_hash: self.hash.clone(),
            seed: self.cfg.seed,
            version: crate::VERSION.to_string(),
            pipeline: self.cfg.pipeline.name().to_string(),
            best_epoch: outcome.best_epoch,
            val_mean_f1: best.val.mean_f1.map(crate::metrics::round4),
            test_accuracy: best.test.accuracy.map(crate::metrics::round4),
            test_mean_f1: best.test.mean_f1.map(crate::metrics::round4),
            windows,
        };
        write_json(&self.path(SUMMARY_FILE), &summary)?;
        Ok(summary)
    }

    fn record(&self, epoch: usize, split: &str, m: &SplitMetrics) -> EpochRecord {
        EpochRecord {
            config_hash: self.hash.clone(),
            seed: self.cfg.seed,
            version: crate::VERSION.to_string(),
            epoch,
            split: split.to_string(),
            loss: m.loss,
            accuracy: m.accuracy,
            mean_f1: m.mean_f1,
        }
        .rounded()
    }

    fn load_summary(&self) -> Result<Summary> {
        let s: Summary = read_json(&self.path(SUMMARY_FILE))?;
        if s.config_hash != self.hash {
            return Err(HarError::Format("summary belongs to another config".into()));
        }
        Ok(s)
    }

    /// Execute the configured pipeline end to end. A directory that already
    /// holds a complete run of this config is left untouched.
    pub fn run(&mut self) -> Result<RunStatus> {
        if self.manifest.complete && !self.force {
            if let Ok(s) = self.load_summary() {
                log::info!("{} is up to date (config {})", self.dir.display(), self.hash);
                return Ok(RunStatus::UpToDate(s));
            }
        }
        let summary = match self.cfg.pipeline {
            PipelineKind::EcdfRf | PipelineKind::StatisticalRf => self.train_rf()?,
            PipelineKind::SupervisedConv => self.train_supervised()?,
            PipelineKind::Pretrain | PipelineKind::EvalPretrained => self.evaluate()?,
        };
        self.manifest.complete = true;
        self.save_manifest()?;
        Ok(RunStatus::Completed(summary))
    }
}

fn score_forest(forest: &Forest, m: &FeatureMatrix) -> Result<(SplitMetrics, ConfusionMatrix)> {
    let mut cm = ConfusionMatrix::new(class_names());
    if m.rows() == 0 {
        return Ok((
            SplitMetrics {
                loss: None,
                accuracy: None,
                mean_f1: None,
            },
            cm,
        ));
    }
    let pred = forest.predict(&m.values)?;
    let truth: Vec<usize> = m.labels.iter().map(|&l| l as usize).collect();
    cm.add(&pred.labels, &truth)?;
    Ok((
        SplitMetrics {
            loss: None,
            accuracy: Some(cm.accuracy()?),
            mean_f1: Some(cm.mean_f1()?),
        },
        cm,
    ))
}

fn decode_windows(bytes: &[u8]) -> Result<(ArtifactHeader, SplitWindows)> {
    let mut r = Reader::new(bytes);
    let h = ArtifactHeader::expect(&mut r, WINDOWS_KIND, WINDOWS_VERSION)?;
    let w = SplitWindows {
        train: WindowBatch::read(&mut r)?,
        val: WindowBatch::read(&mut r)?,
        test: WindowBatch::read(&mut r)?,
    };
    if !r.is_empty() {
        return Err(HarError::Format("trailing bytes after window batches".into()));
    }
    Ok((h, w))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| HarError::Format(e.to_string()))?;
    text.push('\n');
    codec::write_file(path, text.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| HarError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| HarError::Format(format!("{}: {e}", path.display())))
}

/// Human-readable digest of a finished output directory.
pub fn report(dir: &Path) -> Result<String> {
    let summary: Summary = read_json(&dir.join(SUMMARY_FILE))?;
    let records: Vec<EpochRecord> = crate::metrics::read_jsonl(&dir.join(REPORT_FILE))?;
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
    let mut out = String::new();
    let _ = writeln!(out, "pipeline     {}", summary.pipeline);
    let _ = writeln!(out, "config hash  {}", summary.config_hash);
    let _ = writeln!(out, "seed         {}", summary.seed);
    let _ = writeln!(out, "version      {}", summary.version);
    let [tr, va, te] = summary.windows;
    let _ = writeln!(out, "windows      train {tr}, val {va}, test {te}");
    let _ = writeln!(out, "best epoch   {}", summary.best_epoch);
    let _ = writeln!(out, "val F1       {}", fmt(summary.val_mean_f1));
    let _ = writeln!(out, "test acc     {}", fmt(summary.test_accuracy));
    let _ = writeln!(out, "test F1      {}", fmt(summary.test_mean_f1));
    let _ = writeln!(out);
    let _ = writeln!(out, "{:>5}  {:>10}  {:>8}  {:>8}  {:>8}", "epoch", "train loss", "train F1", "val F1", "test F1");
    let last = records.iter().map(|r| r.epoch).max().unwrap_or(0);
    for epoch in 0..=last {
        let get = |split: &str| records.iter().find(|r| r.epoch == epoch && r.split == split);
        let (Some(train), val, test) = (get("train"), get("val"), get("test")) else {
            continue;
        };
        let _ = writeln!(
            out,
            "{epoch:>5}  {:>10}  {:>8}  {:>8}  {:>8}",
            fmt(train.loss),
            fmt(train.mean_f1),
            fmt(val.and_then(|r| r.mean_f1)),
            fmt(test.and_then(|r| r.mean_f1))
        );
    }
    if let Ok(cm) = fs::read_to_string(dir.join(CONFUSION_FILE)) {
        let _ = writeln!(out);
        let _ = writeln!(out, "test confusion (rows truth, columns prediction)");
        out.push_str(&cm);
    }
    Ok(out)
}
