use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::augment::{apply_transform, apply_window, AugmentParams, PairCursor, TransformKind};
use crate::codec::{ArtifactHeader, Reader, Writer};
use crate::error::{HarError, Result};
use crate::nn::tensor::windows_to_tensor;
use crate::nn::{checkpoint, loss, Checkpoint, GraphState, ModelGraph, Optimizer, Param, Scalar, Tensor};
use crate::seed::{self, Rng};

use super::batch::{epoch_batches, gather, TrainSettings, UnlabeledWindows};
use super::losses::{autoencoder_loss, make_mask_plan, masked_reconstruction_loss, nt_xent_loss};
use super::models::{discriminator_head, projection_head, reconstruction_head, EncoderConfig};
use super::PretextTask;

/// Task-specific hyperparameters of a pretext run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretextConfig {
    pub task: PretextTask,
    /// NT-Xent temperature.
    pub temperature: f64,
    /// Projection head widths (contrastive task).
    pub projection: Vec<usize>,
    /// Hidden width of each transform discriminator (multi-task).
    pub discriminator_hidden: usize,
    /// Transforms used by the contrastive and multi-task pretexts. Empty
    /// selects the task's default pool.
    pub pool: Vec<TransformKind>,
}

impl Default for PretextConfig {
    fn default() -> Self {
        Self {
            task: PretextTask::Simclr,
            temperature: 0.1,
            projection: vec![256, 128, 50],
            discriminator_hidden: 256,
            pool: Vec::new(),
        }
    }
}

impl PretextConfig {
    pub fn resolved_pool(&self) -> Vec<TransformKind> {
        if !self.pool.is_empty() {
            return self.pool.clone();
        }
        match self.task {
            PretextTask::Multitask => TransformKind::multitask_pool(),
            _ => TransformKind::simclr_pool(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            errs.push(format!("temperature: must be positive, got {}", self.temperature));
        }
        if self.projection.is_empty() || self.projection.contains(&0) {
            errs.push("projection: widths must be positive and non-empty".to_string());
        }
        if self.discriminator_hidden == 0 {
            errs.push("discriminator_hidden: must be positive".to_string());
        }
        let pool = self.resolved_pool();
        let min = if self.task == PretextTask::Simclr { 2 } else { 1 };
        if pool.len() < min {
            errs.push(format!("pool: needs at least {min} transforms"));
        }
        let mut sorted = pool.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != pool.len() {
            errs.push("pool: transforms must be distinct".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(HarError::Config(errs))
        }
    }
}

/// Encoder plus the task's head graphs, in a fixed order.
pub struct PretextModel<F> {
    pub task: PretextTask,
    pub encoder: ModelGraph<F>,
    pub heads: Vec<(String, ModelGraph<F>)>,
    pool: Vec<TransformKind>,
    temperature: f64,
    augment: AugmentParams,
}

impl<F: Scalar> PretextModel<F> {
    pub fn new(
        cfg: &PretextConfig,
        encoder_cfg: &EncoderConfig,
        augment: &AugmentParams,
        channels: usize,
        timesteps: usize,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        encoder_cfg.validate()?;
        let encoder = ModelGraph::new(
            &encoder_cfg.specs(channels, cfg.task.encoder_padding()),
            &[channels, timesteps],
            &mut seed::substream(seed, "init", 0),
        )?;
        let emb = encoder.output_shape().to_vec();
        let d = encoder_cfg.embed_dim();
        let mut init = seed::substream(seed, "init", 1);
        let pool = cfg.resolved_pool();
        let heads = match cfg.task {
            PretextTask::Autoencoder => {
                vec![("decoder".to_string(), ModelGraph::new(&encoder_cfg.decoder_specs(channels), &emb, &mut init)?)]
            }
            PretextTask::Masked => vec![(
                "reconstruction".to_string(),
                ModelGraph::new(&reconstruction_head(d, channels), &emb, &mut init)?,
            )],
            PretextTask::Multitask => pool
                .iter()
                .map(|k| {
                    Ok((
                        format!("discriminator.{k}"),
                        ModelGraph::new(&discriminator_head(d, cfg.discriminator_hidden), &emb, &mut init)?,
                    ))
                })
                .collect::<Result<_>>()?,
            PretextTask::Simclr => vec![(
                "projection".to_string(),
                ModelGraph::new(&projection_head(d, &cfg.projection), &emb, &mut init)?,
            )],
        };
        if let Some((name, h)) = heads.iter().find(|(_, h)| {
            cfg.task.reconstructs() && h.output_shape() != [channels, timesteps]
        }) {
            return Err(HarError::Shape(format!(
                "{name} produces {:?}, expected [{channels}, {timesteps}]",
                h.output_shape()
            )));
        }
        Ok(Self {
            task: cfg.task,
            encoder,
            heads,
            pool,
            temperature: cfg.temperature,
            augment: *augment,
        })
    }

    fn graphs_mut(&mut self) -> impl Iterator<Item = &mut ModelGraph<F>> {
        std::iter::once(&mut self.encoder).chain(self.heads.iter_mut().map(|(_, g)| g))
    }

    pub fn set_training(&mut self, training: bool) {
        self.graphs_mut().for_each(|g| g.set_training(training));
    }

    pub fn set_parallel(&mut self, parallel: bool) {
        self.graphs_mut().for_each(|g| g.set_parallel(parallel));
    }

    fn reseed_dropout(&mut self, seed: u64, epoch: usize) {
        for (i, g) in self.graphs_mut().enumerate() {
            g.reseed_dropout(seed::substream(seed, &format!("dropout/{i}"), epoch as u64));
        }
    }

    fn zero_grad(&mut self) {
        self.graphs_mut().for_each(|g| g.zero_grad());
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        let mut out: Vec<&mut Param<F>> = self.encoder.params_mut().collect();
        for (_, h) in &mut self.heads {
            out.extend(h.params_mut());
        }
        out
    }

    pub fn graph_states(&self) -> Vec<GraphState> {
        std::iter::once(GraphState::capture("encoder", &self.encoder))
            .chain(self.heads.iter().map(|(n, g)| GraphState::capture(n, g)))
            .collect()
    }

    pub fn load_states(&mut self, states: &[GraphState]) -> Result<()> {
        let names: Vec<String> = std::iter::once("encoder".to_string())
            .chain(self.heads.iter().map(|(n, _)| n.clone()))
            .collect();
        if states.len() != names.len() {
            return Err(HarError::Format("checkpoint graphs do not match the pretext model".into()));
        }
        for ((g, s), name) in self.graphs_mut().zip(states).zip(&names) {
            if &s.name != name || s.specs != g.specs() {
                return Err(HarError::Format(format!("checkpoint graph '{}' does not match '{name}'", s.name)));
            }
            g.import_params(&s.params)?;
        }
        Ok(())
    }

    /// Loss on the windows `idx`; with `train` set, gradients are
    /// accumulated into every graph. `rng` drives augmentations and masks.
    pub fn step(
        &mut self,
        windows: &UnlabeledWindows,
        tensor: &Tensor<F>,
        idx: &[usize],
        rng: &mut Rng,
        cursor: &mut PairCursor,
        train: bool,
    ) -> Result<f64> {
        let (t, c) = (windows.timesteps, windows.channels);
        match self.task {
            PretextTask::Autoencoder => {
                let x = gather(tensor, idx);
                let emb = self.encoder.forward(&x)?;
                let dec = &mut self.heads[0].1;
                let (l, g) = autoencoder_loss(&x, &dec.forward(&emb)?)?;
                if train {
                    let demb = dec.backward(&g, true)?.expect("input gradient");
                    self.encoder.backward(&demb, false)?;
                }
                Ok(l)
            }
            PretextTask::Masked => {
                let x = gather(tensor, idx);
                let mut corrupted = x.clone();
                let mut keep = Vec::with_capacity(x.len());
                for sample in corrupted.data_mut().chunks_mut(c * t) {
                    let plan = make_mask_plan(t, rng);
                    plan.apply(sample, c);
                    keep.extend(plan.keep_mask(c));
                }
                let emb = self.encoder.forward(&corrupted)?;
                let head = &mut self.heads[0].1;
                let (l, g) = masked_reconstruction_loss(&x, &head.forward(&emb)?, &keep)?;
                if train {
                    let demb = head.backward(&g, true)?.expect("input gradient");
                    self.encoder.backward(&demb, false)?;
                }
                Ok(l)
            }
            PretextTask::Multitask => {
                let raw = windows.select(idx);
                let mut total = 0.0;
                for (k, &kind) in self.pool.clone().iter().enumerate() {
                    let mut data = raw.clone();
                    let mut labels = Vec::with_capacity(idx.len());
                    for w in data.chunks_mut(t * c) {
                        let applied = rng.random_bool(0.5);
                        if applied {
                            apply_window(kind, &self.augment, w, t, c, rng)?;
                        }
                        labels.push(if applied { 1.0 } else { 0.0 });
                    }
                    let x: Tensor<F> = windows_to_tensor(&data, idx.len(), t, c)?;
                    let emb = self.encoder.forward(&x)?;
                    let head = &mut self.heads[k].1;
                    let (l, g) = loss::bce_with_logits(&head.forward(&emb)?, &labels)?;
                    total += l;
                    if train {
                        let demb = head.backward(&g, true)?.expect("input gradient");
                        self.encoder.backward(&demb, false)?;
                    }
                }
                Ok(total)
            }
            PretextTask::Simclr => {
                let (a, b) = cursor.next_pair();
                let n = idx.len();
                let mut v1 = windows.select(idx);
                let mut v2 = v1.clone();
                apply_transform(a, &self.augment, &mut v1, t, c, rng)?;
                apply_transform(b, &self.augment, &mut v2, t, c, rng)?;
                v1.extend_from_slice(&v2);
                let x: Tensor<F> = windows_to_tensor(&v1, 2 * n, t, c)?;
                let emb = self.encoder.forward(&x)?;
                let head = &mut self.heads[0].1;
                let o = head.forward(&emb)?;
                let (l, g1, g2) = nt_xent_loss(&o.slice_batch(0, n), &o.slice_batch(n, 2 * n), self.temperature)?;
                if train {
                    let g = Tensor::concat(&[&g1, &g2])?;
                    let demb = head.backward(&g, true)?.expect("input gradient");
                    self.encoder.backward(&demb, false)?;
                }
                Ok(l)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainEpoch {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

/// Where and how a pretext run is persisted.
#[derive(Debug, Clone, Default)]
pub struct PretrainOptions {
    pub seed: u64,
    pub config_hash: String,
    pub parallel: bool,
    /// When set, a checkpoint is written after every epoch.
    pub checkpoint_dir: Option<PathBuf>,
}

pub struct PretrainOutcome {
    pub history: Vec<PretrainEpoch>,
    pub checkpoint: Checkpoint,
}

pub fn epoch_checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("pretrain-epoch-{epoch:03}.ckpt"))
}

fn encode_extra(history: &[PretrainEpoch], cursor: &PairCursor) -> Vec<u8> {
    let mut w = Writer::new();
    w.usize(history.len());
    for h in history {
        w.usize(h.epoch);
        w.f64(h.learning_rate);
        w.f64(h.train_loss);
        w.bool(h.val_loss.is_some());
        w.f64(h.val_loss.unwrap_or(0.0));
    }
    cursor.write(&mut w);
    w.into_bytes()
}

fn decode_extra(bytes: &[u8], cursor: &mut PairCursor) -> Result<Vec<PretrainEpoch>> {
    let mut r = Reader::new(bytes);
    let n = r.usize()?;
    let mut history = Vec::with_capacity(n);
    for _ in 0..n {
        let epoch = r.usize()?;
        let learning_rate = r.f64()?;
        let train_loss = r.f64()?;
        let has_val = r.bool()?;
        let v = r.f64()?;
        history.push(PretrainEpoch {
            epoch,
            learning_rate,
            train_loss,
            val_loss: has_val.then_some(v),
        });
    }
    cursor.read_position(&mut r)?;
    Ok(history)
}

/// Train the encoder on a pretext task. Labels never reach this function.
/// Passing `resume` continues from the epoch recorded in that checkpoint;
/// every per-epoch random stream is derived from `(seed, epoch)`, so the
/// continuation is bit-identical to an uninterrupted run.
#[allow(clippy::too_many_arguments)]
pub fn pretrain<F: Scalar>(
    cfg: &PretextConfig,
    encoder_cfg: &EncoderConfig,
    augment: &AugmentParams,
    settings: &TrainSettings,
    train: &UnlabeledWindows,
    val: Option<&UnlabeledWindows>,
    opts: &PretrainOptions,
    resume: Option<&Checkpoint>,
) -> Result<PretrainOutcome> {
    settings.validate()?;
    if train.n == 0 {
        return Err(HarError::Data("no training windows for pretraining".into()));
    }
    let seed = opts.seed;
    let mut model = PretextModel::<F>::new(cfg, encoder_cfg, augment, train.channels, train.timesteps, seed)?;
    model.set_parallel(opts.parallel);
    let pool = cfg.resolved_pool();
    let cursor_pool = if pool.len() >= 2 { pool.clone() } else { TransformKind::simclr_pool() };
    let mut cursor = PairCursor::new(&cursor_pool, seed::derive_seed(seed, "pairs", 0))?;
    let mut optim: Optimizer = settings.optimizer();
    let mut history = Vec::new();
    let mut start = 0;
    if let Some(ck) = resume {
        if ck.task != cfg.task.tag() {
            return Err(HarError::InvalidArgument(format!(
                "cannot resume a '{}' run from a '{}' checkpoint",
                cfg.task.tag(),
                ck.task
            )));
        }
        if ck.header.seed != seed {
            return Err(HarError::InvalidArgument(format!(
                "checkpoint was written with seed {}, run uses {seed}",
                ck.header.seed
            )));
        }
        model.load_states(&ck.graphs)?;
        optim = ck
            .optimizer
            .clone()
            .ok_or_else(|| HarError::Format("checkpoint has no optimizer state".into()))?;
        history = decode_extra(&ck.extra, &mut cursor)?;
        start = ck.epoch;
    }
    let train_x: Tensor<F> = train.to_tensor()?;
    let val_x: Option<Tensor<F>> = val.filter(|v| v.n > 0).map(|v| v.to_tensor()).transpose()?;
    let mut checkpoint = None;
    for epoch in start..settings.epochs {
        let lr = settings.rate(epoch);
        model.set_training(true);
        model.reseed_dropout(seed, epoch);
        let mut rng = seed::substream(seed, "augment", epoch as u64);
        let mut sum = 0.0;
        for idx in epoch_batches(train.n, settings.batch_size, seed, epoch) {
            model.zero_grad();
            let l = model.step(train, &train_x, &idx, &mut rng, &mut cursor, true)?;
            if !l.is_finite() {
                return Err(HarError::Numeric(format!("non-finite pretext loss at epoch {epoch}")));
            }
            sum += l * idx.len() as f64;
            optim.step(&mut model.params_mut(), lr)?;
        }
        let val_loss = match (val, &val_x) {
            (Some(v), Some(vx)) => {
                model.set_training(false);
                // same episode every epoch so the numbers are comparable
                let mut vrng = seed::substream(seed, "val-augment", 0);
                let mut vcursor = PairCursor::new(&cursor_pool, seed::derive_seed(seed, "val-pairs", 0))?;
                let mut vsum = 0.0;
                let idx: Vec<usize> = (0..v.n).collect();
                for chunk in idx.chunks(settings.batch_size) {
                    vsum += model.step(v, vx, chunk, &mut vrng, &mut vcursor, false)? * chunk.len() as f64;
                }
                Some(vsum / v.n as f64)
            }
            _ => None,
        };
        let rec = PretrainEpoch {
            epoch,
            learning_rate: lr,
            train_loss: sum / train.n as f64,
            val_loss,
        };
        log::info!(
            "pretrain {} epoch {epoch}: lr {lr:.3e} train {:.4} val {}",
            cfg.task.tag(),
            rec.train_loss,
            val_loss.map_or("-".to_string(), |v| format!("{v:.4}"))
        );
        history.push(rec);
        let ck = Checkpoint {
            header: ArtifactHeader::new(checkpoint::KIND, checkpoint::VERSION, &opts.config_hash, seed),
            task: cfg.task.tag().to_string(),
            epoch: epoch + 1,
            graphs: model.graph_states(),
            optimizer: Some(optim.clone()),
            extra: encode_extra(&history, &cursor),
        };
        if let Some(dir) = &opts.checkpoint_dir {
            ck.save(&epoch_checkpoint_path(dir, epoch + 1))?;
        }
        checkpoint = Some(ck);
    }
    let checkpoint = match checkpoint {
        Some(c) => c,
        None => resume
            .cloned()
            .ok_or_else(|| HarError::InvalidArgument("no epochs to run".into()))?,
    };
    Ok(PretrainOutcome { history, checkpoint })
}
