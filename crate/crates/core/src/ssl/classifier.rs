use crate::codec::ArtifactHeader;
use crate::data::class_names;
use crate::error::{HarError, Result};
use crate::metrics::{ConfusionMatrix, SplitMetrics};
use crate::nn::{checkpoint, loss, Checkpoint, GraphState, ModelGraph, Optimizer, Padding, Scalar, Tensor};
use crate::seed;
use crate::windowing::WindowBatch;

use super::batch::{epoch_batches, gather, LabeledTensor, TrainSettings};
use super::models::{classifier_head, EncoderConfig};
use super::PretextTask;

/// Task tag written into checkpoints of supervised classifiers.
pub const SUPERVISED_TAG: &str = "supervised";

/// Labeled train, validation and test windows.
#[derive(Debug, Clone, Copy)]
pub struct LabeledSplits<'a> {
    pub train: &'a WindowBatch,
    pub val: &'a WindowBatch,
    pub test: &'a WindowBatch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierEpoch {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train: SplitMetrics,
    pub val: SplitMetrics,
    pub test: SplitMetrics,
}

#[derive(Debug, Clone)]
pub struct ClassifierOutcome {
    pub history: Vec<ClassifierEpoch>,
    /// Epoch with the highest validation mean F1 (earliest on ties).
    pub best_epoch: usize,
    pub test_confusion: ConfusionMatrix,
    /// Final weights and optimizer state.
    pub checkpoint: Checkpoint,
}

impl ClassifierOutcome {
    pub fn best(&self) -> &ClassifierEpoch {
        &self.history[self.best_epoch]
    }

    /// Test mean F1 at the best-validation epoch.
    pub fn test_f1(&self) -> f64 {
        self.best().test.mean_f1.unwrap_or(0.0)
    }
}

/// Everything besides the data that a classifier run needs.
#[derive(Debug, Clone)]
pub struct ClassifierOptions {
    pub settings: TrainSettings,
    pub hidden: usize,
    pub seed: u64,
    pub config_hash: String,
    pub parallel: bool,
    pub task_tag: String,
}

fn evaluate<F: Scalar>(
    encoder: &mut ModelGraph<F>,
    head: &mut ModelGraph<F>,
    data: &LabeledTensor<F>,
    batch_size: usize,
) -> Result<(SplitMetrics, ConfusionMatrix)> {
    let mut cm = ConfusionMatrix::new(class_names());
    if data.is_empty() {
        return Ok((
            SplitMetrics {
                loss: None,
                accuracy: None,
                mean_f1: None,
            },
            cm,
        ));
    }
    let (te, th) = (encoder.is_training(), head.is_training());
    encoder.set_training(false);
    head.set_training(false);
    let mut total = 0.0;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let x = gather(&data.x, chunk);
        let y: Vec<usize> = chunk.iter().map(|&i| data.y[i]).collect();
        let logits = head.forward(&encoder.forward(&x)?)?;
        let (l, _) = loss::cross_entropy(&logits, &y)?;
        total += l * chunk.len() as f64;
        cm.add(&loss::argmax(&logits), &y)?;
    }
    encoder.set_training(te);
    head.set_training(th);
    Ok((
        SplitMetrics {
            loss: Some(total / data.len() as f64),
            accuracy: Some(cm.accuracy()?),
            mean_f1: Some(cm.mean_f1()?),
        },
        cm,
    ))
}

/// Train `head` on top of `encoder`. With `frozen` set, only the head's
/// parameters are updated; the encoder still follows the train/eval mode.
pub fn train_classifier<F: Scalar>(
    mut encoder: ModelGraph<F>,
    mut head: ModelGraph<F>,
    frozen: bool,
    splits: LabeledSplits<'_>,
    opts: &ClassifierOptions,
) -> Result<ClassifierOutcome> {
    let s = &opts.settings;
    s.validate()?;
    let train = LabeledTensor::<F>::from_batch(splits.train)?;
    let val = LabeledTensor::<F>::from_batch(splits.val)?;
    let test = LabeledTensor::<F>::from_batch(splits.test)?;
    if train.is_empty() {
        return Err(HarError::Data("no training windows".into()));
    }
    encoder.set_frozen(frozen);
    encoder.set_parallel(opts.parallel);
    head.set_parallel(opts.parallel);
    let mut optim: Optimizer = s.optimizer();
    let mut history = Vec::with_capacity(s.epochs);
    let mut best: Option<(usize, f64, ConfusionMatrix)> = None;
    for epoch in 0..s.epochs {
        let lr = s.rate(epoch);
        encoder.set_training(true);
        head.set_training(true);
        encoder.reseed_dropout(seed::substream(opts.seed, "dropout", 2 * epoch as u64));
        head.reseed_dropout(seed::substream(opts.seed, "dropout", 2 * epoch as u64 + 1));
        let mut sum = 0.0;
        for idx in epoch_batches(train.len(), s.batch_size, opts.seed, epoch) {
            let x = gather(&train.x, &idx);
            let y: Vec<usize> = idx.iter().map(|&i| train.y[i]).collect();
            encoder.zero_grad();
            head.zero_grad();
            let emb = encoder.forward(&x)?;
            let logits = head.forward(&emb)?;
            let (l, g) = loss::cross_entropy(&logits, &y)?;
            if !l.is_finite() {
                return Err(HarError::Numeric(format!("non-finite training loss at epoch {epoch}")));
            }
            sum += l * idx.len() as f64;
            let demb = head.backward(&g, !frozen)?;
            if let Some(demb) = demb {
                encoder.backward(&demb, false)?;
            }
            let mut params: Vec<_> = if frozen {
                head.params_mut().collect()
            } else {
                encoder.params_mut().chain(head.params_mut()).collect()
            };
            optim.step(&mut params, lr)?;
        }
        let (mut train_m, _) = evaluate(&mut encoder, &mut head, &train, s.batch_size)?;
        train_m.loss = Some(sum / train.len() as f64);
        let (val_m, _) = evaluate(&mut encoder, &mut head, &val, s.batch_size)?;
        let (test_m, test_cm) = evaluate(&mut encoder, &mut head, &test, s.batch_size)?;
        log::info!(
            "epoch {epoch}: lr {lr:.3e} train loss {:.4} f1 {:.4} | val f1 {:.4} | test f1 {:.4}",
            train_m.loss.unwrap_or(f64::NAN),
            train_m.mean_f1.unwrap_or(f64::NAN),
            val_m.mean_f1.unwrap_or(f64::NAN),
            test_m.mean_f1.unwrap_or(f64::NAN)
        );
        // without validation windows the last epoch is reported
        let score = val_m.mean_f1.unwrap_or(epoch as f64);
        if best.as_ref().is_none_or(|(_, b, _)| score > *b) {
            best = Some((epoch, score, test_cm));
        }
        history.push(ClassifierEpoch {
            epoch,
            learning_rate: lr,
            train: train_m,
            val: val_m,
            test: test_m,
        });
    }
    let (best_epoch, _, test_confusion) = best.expect("at least one epoch");
    let checkpoint = Checkpoint {
        header: ArtifactHeader::new(checkpoint::KIND, checkpoint::VERSION, &opts.config_hash, opts.seed),
        task: opts.task_tag.clone(),
        epoch: s.epochs,
        graphs: vec![
            GraphState::capture("encoder", &encoder),
            GraphState::capture("classifier", &head),
        ],
        optimizer: Some(optim),
        extra: Vec::new(),
    };
    Ok(ClassifierOutcome {
        history,
        best_epoch,
        test_confusion,
        checkpoint,
    })
}

fn input_shape(b: &WindowBatch) -> [usize; 2] {
    [b.channels, b.win_len]
}

/// The supervised convolutional classifier: a freshly initialized encoder
/// and classification head trained end to end.
pub fn train_supervised<F: Scalar>(
    encoder_cfg: &EncoderConfig,
    n_classes: usize,
    splits: LabeledSplits<'_>,
    opts: &ClassifierOptions,
) -> Result<ClassifierOutcome> {
    encoder_cfg.validate()?;
    let shape = input_shape(splits.train);
    let encoder = ModelGraph::<F>::new(
        &encoder_cfg.specs(shape[0], Padding::Valid),
        &shape,
        &mut seed::substream(opts.seed, "init", 0),
    )?;
    let head = ModelGraph::<F>::new(
        &classifier_head(encoder_cfg.embed_dim(), opts.hidden, n_classes),
        encoder.output_shape(),
        &mut seed::substream(opts.seed, "init", 1),
    )?;
    train_classifier(encoder, head, false, splits, opts)
}

/// Replace the pretext head of a pretrained checkpoint with a fresh
/// classification head and train it, optionally keeping the encoder fixed.
pub fn evaluate_with_classifier<F: Scalar>(
    ckpt: &Checkpoint,
    frozen: bool,
    encoder_cfg: &EncoderConfig,
    n_classes: usize,
    splits: LabeledSplits<'_>,
    opts: &ClassifierOptions,
) -> Result<ClassifierOutcome> {
    let task: PretextTask = ckpt.task.parse().map_err(|_| {
        HarError::InvalidArgument(format!(
            "checkpoint task '{}' is not a pretext task; evaluation needs a pretrained encoder",
            ckpt.task
        ))
    })?;
    let state = ckpt.graph("encoder")?;
    let shape = input_shape(splits.train);
    let expected = encoder_cfg.specs(shape[0], task.encoder_padding());
    if state.specs != expected {
        return Err(HarError::InvalidArgument(
            "checkpoint encoder layers do not match the configured encoder".into(),
        ));
    }
    if state.input_shape != shape {
        return Err(HarError::Shape(format!(
            "checkpoint encoder expects input {:?}, data windows are {:?}",
            state.input_shape, shape
        )));
    }
    let encoder: ModelGraph<F> = state.restore()?;
    let head = ModelGraph::<F>::new(
        &classifier_head(encoder_cfg.embed_dim(), opts.hidden, n_classes),
        encoder.output_shape(),
        &mut seed::substream(opts.seed, "init", 1),
    )?;
    train_classifier(encoder, head, frozen, splits, opts)
}

/// Predicted class ids for `windows` with a trained classifier checkpoint.
pub fn predict<F: Scalar>(ckpt: &Checkpoint, windows: &WindowBatch, batch_size: usize) -> Result<Vec<usize>> {
    let mut encoder: ModelGraph<F> = ckpt.graph("encoder")?.restore()?;
    let mut head: ModelGraph<F> = ckpt.graph("classifier")?.restore()?;
    encoder.set_training(false);
    head.set_training(false);
    let x: Tensor<F> = LabeledTensor::from_batch(windows)?.x;
    let mut out = Vec::with_capacity(windows.len());
    let idx: Vec<usize> = (0..windows.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        out.extend(loss::argmax(&head.forward(&encoder.forward(&gather(&x, chunk))?)?));
    }
    Ok(out)
}
