//! Pretraining and transfer: losses, data split, the epoch loop with
//! plateau scheduling and early stopping, evaluation.

mod checkpoint;
mod metrics;

pub use checkpoint::{Checkpoint, NamedArray, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use metrics::{metrics_csv, parse_metrics, read_metrics, write_metrics, EpochRecord, METRICS_HEADER};

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dsp::{draw_mask_antenna, frame_to_stft, StftExample};
use crate::error::{Error, Result};
use crate::models::Model;
use crate::synth::{labels_to_target, LabeledCapture};
use crate::tensor::optim::Adam;
use crate::tensor::{mse, no_grad, NormMode, Tensor};

const SPLIT_STREAM: u64 = 10;
const SHUFFLE_STREAM: u64 = 11;
const VAL_MASK_STREAM: u64 = 12;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// What the network is trained to produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Reconstruct the clean STFT from a copy with one antenna zeroed (MSE).
    Inpaint,
    /// Regress the per-bin bandwidth target (log-domain loss on signal bins).
    Bandwidth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub initial_lr: f32,
    pub early_stop_patience: usize,
    pub plateau_patience: usize,
    pub lr_factor: f32,
    pub val_fraction: f64,
    pub seed: u64,
    pub freeze_encoder: bool,
    /// Added to the prediction inside the logarithm of the bandwidth loss.
    pub epsilon: f32,
    /// Hard cap on epochs in addition to early stopping.
    pub max_epochs: usize,
}

impl TrainConfig {
    pub fn pretrain() -> Self {
        Self {
            batch_size: 16,
            initial_lr: 0.001,
            early_stop_patience: 30,
            plateau_patience: 10,
            lr_factor: 0.1,
            val_fraction: 0.2,
            seed: 0,
            freeze_encoder: false,
            epsilon: 1e-6,
            max_epochs: 1000,
        }
    }

    pub fn transfer() -> Self {
        Self {
            initial_lr: 0.01,
            ..Self::pretrain()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if self.early_stop_patience == 0 || self.plateau_patience == 0 {
            return bad("patience values must be at least 1".into());
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad(format!("validation fraction {} not in (0, 1)", self.val_fraction));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon {} must be positive", self.epsilon));
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.initial_lr));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return bad(format!("lr factor {} not in (0, 1)", self.lr_factor));
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        Ok(())
    }

    pub fn to_metadata(&self) -> Vec<(String, String)> {
        [
            ("batch_size", self.batch_size.to_string()),
            ("initial_lr", self.initial_lr.to_string()),
            ("early_stop_patience", self.early_stop_patience.to_string()),
            ("plateau_patience", self.plateau_patience.to_string()),
            ("lr_factor", self.lr_factor.to_string()),
            ("val_fraction", self.val_fraction.to_string()),
            ("seed", self.seed.to_string()),
            ("freeze_encoder", self.freeze_encoder.to_string()),
            ("epsilon", self.epsilon.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (format!("train.{k}"), v))
        .collect()
    }
}

/// A standardized STFT and, for regression, its bandwidth target.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub stft: StftExample,
    pub target: Option<Vec<f32>>,
}

/// STFTs every frame into `samples / bins` chunks of `bins`, standardizes
/// each example and optionally attaches bandwidth targets.
pub fn examples_from_capture(capture: &LabeledCapture, bins: usize, with_targets: bool) -> Result<Vec<Example>> {
    if bins == 0 || !capture.samples.is_multiple_of(bins) {
        return Err(Error::Config(format!(
            "{} samples per frame are not a multiple of {bins} bins",
            capture.samples
        )));
    }
    let chunks = capture.samples / bins;
    capture
        .frames
        .par_iter()
        .zip(capture.labels.par_iter())
        .map(|(frame, labels)| {
            let (stft, _) = frame_to_stft(frame, chunks, bins)?.standardized();
            let target = if with_targets {
                Some(labels_to_target(labels, bins)?)
            } else {
                None
            };
            Ok(Example { stft, target })
        })
        .collect()
}

pub fn mse_loss(recon: &Tensor, target: &Tensor) -> Result<Tensor> {
    mse(recon, target)
}

/// Loss of one example: sum over bins with `B_i != 0` of
/// `(ln B_i - ln(eps + B̂_i))²`, accumulated in f64.
pub fn bandwidth_loss_scalar(target: &[f32], pred: &[f32], eps: f32) -> f64 {
    target
        .iter()
        .zip(pred)
        .filter(|(&b, _)| b != 0.0)
        .map(|(&b, &p)| ((b as f64).ln() - (eps as f64 + p as f64).ln()).powi(2))
        .sum()
}

/// Batch bandwidth loss: mean over examples (rows of `[N, F]`, or a single
/// `[F]` row) of [`bandwidth_loss_scalar`]. Bins with a zero target take no
/// part in the value and receive an exactly zero gradient.
pub fn bandwidth_loss(target: &Tensor, pred: &Tensor, eps: f32) -> Result<Tensor> {
    if target.shape() != pred.shape() || !(1..=2).contains(&pred.ndim()) {
        return Err(Error::shape(format!(
            "bandwidth_loss: target {:?} and prediction {:?} must be equal [N, F] or [F]",
            target.shape(),
            pred.shape()
        )));
    }
    let f = *pred.shape().last().expect("non-empty shape");
    let n = pred.len() / f.max(1);
    let (bs, ps) = (target.to_vec(), pred.to_vec());
    for (i, row) in bs.chunks(f.max(1)).enumerate() {
        if row.iter().all(|&b| b == 0.0) {
            log::warn!("bandwidth target row {i} has no signals; it contributes 0 to the loss");
        }
    }
    let total: f64 = bs
        .chunks(f.max(1))
        .zip(ps.chunks(f.max(1)))
        .map(|(b, p)| bandwidth_loss_scalar(b, p, eps))
        .sum();
    let value = (total / n.max(1) as f64) as f32;
    let pc = pred.clone();
    Ok(Tensor::from_op(vec![value], vec![], &[pred], move |g| {
        let scale = g[0] as f64 / n.max(1) as f64;
        let gp: Vec<f32> = bs
            .iter()
            .zip(&ps)
            .map(|(&b, &p)| {
                if b == 0.0 {
                    0.0
                } else {
                    let q = eps as f64 + p as f64;
                    (scale * -2.0 * ((b as f64).ln() - q.ln()) / q) as f32
                }
            })
            .collect();
        pc.accumulate_grad(&gp);
    }))
}

/// Shuffled `(train, val)` index split with `round(n · val_fraction)`
/// validation items, clamped so both sides are non-empty.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::param(format!("cannot split {n} examples into train and validation")));
    }
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Config(format!("validation fraction {val_fraction} not in (0, 1)")));
    }
    let n_val = ((n as f64 * val_fraction).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream_rng(seed, SPLIT_STREAM));
    let val = idx.split_off(n - n_val);
    Ok((idx, val))
}

pub fn split_dataset<T: Clone>(items: &[T], val_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    let (tr, va) = split_indices(items.len(), val_fraction, seed)?;
    let pick = |ix: &[usize]| ix.iter().map(|&i| items[i].clone()).collect();
    Ok((pick(&tr), pick(&va)))
}

/// Outcome of one observed validation loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ScheduleStep {
    pub improved: bool,
    pub lr_dropped: bool,
    pub stop: bool,
}

/// Best-so-far tracking, reduce-on-plateau and early stopping.
///
/// Only a strictly lower loss counts as an improvement. After
/// `plateau_patience` non-improving epochs since the last improvement or
/// drop the learning rate is multiplied by `lr_factor`; after
/// `early_stop_patience` non-improving epochs training stops (a stop takes
/// precedence over a drop in the same epoch).
#[derive(Debug, Clone)]
pub struct PlateauSchedule {
    best: f64,
    best_epoch: usize,
    since_best: usize,
    since_change: usize,
    lr: f32,
    plateau_patience: usize,
    early_stop_patience: usize,
    lr_factor: f32,
}

impl PlateauSchedule {
    /// `baseline` is the epoch-0 loss of the untrained model.
    pub fn new(baseline: f64, config: &TrainConfig) -> Self {
        Self {
            best: baseline,
            best_epoch: 0,
            since_best: 0,
            since_change: 0,
            lr: config.initial_lr,
            plateau_patience: config.plateau_patience,
            early_stop_patience: config.early_stop_patience,
            lr_factor: config.lr_factor,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> ScheduleStep {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.since_best = 0;
            self.since_change = 0;
            return ScheduleStep {
                improved: true,
                ..Default::default()
            };
        }
        self.since_best += 1;
        self.since_change += 1;
        if self.since_best >= self.early_stop_patience {
            return ScheduleStep {
                stop: true,
                ..Default::default()
            };
        }
        if self.since_change >= self.plateau_patience {
            self.since_change = 0;
            self.lr *= self.lr_factor;
            return ScheduleStep {
                lr_dropped: true,
                ..Default::default()
            };
        }
        ScheduleStep::default()
    }

    /// Learning rate for the next epoch.
    pub fn lr(&self) -> f32 {
        self.lr
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights with the lowest validation loss (epoch 0 if nothing improved).
    pub best: Checkpoint,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Validation loss of the model before any update.
    pub initial_val_loss: f64,
    pub records: Vec<EpochRecord>,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

fn check_examples(examples: &[&Example], objective: Objective) -> Result<[usize; 3]> {
    let first = examples.first().ok_or_else(|| Error::Config("empty dataset".into()))?;
    let shape = first.stft.shape();
    for (i, e) in examples.iter().enumerate() {
        if e.stft.shape() != shape {
            return Err(Error::shape(format!(
                "example {i} has shape {:?}, expected {shape:?}",
                e.stft.shape()
            )));
        }
        if objective == Objective::Bandwidth && e.target.as_ref().map(Vec::len) != Some(shape[2]) {
            return Err(Error::Config(format!("example {i} lacks a bandwidth target of length {}", shape[2])));
        }
    }
    Ok(shape)
}

/// Stacks examples into `[N, C, T, F]`, zeroing the channel pair of
/// `masks[i]` in example `i` when masks are given.
fn stack_inputs(examples: &[&Example], masks: Option<&[usize]>) -> Result<Tensor> {
    let [c, t, f] = examples[0].stft.shape();
    let plane = t * f;
    let mut data = Vec::with_capacity(examples.len() * c * plane);
    for (i, e) in examples.iter().enumerate() {
        let start = data.len();
        data.extend_from_slice(&e.stft.data);
        if let Some(m) = masks {
            let a = m[i];
            data[start + 2 * a * plane..start + (2 * a + 2) * plane].fill(0.0);
        }
    }
    Tensor::new(data, &[examples.len(), c, t, f])
}

fn stack_targets(examples: &[&Example], objective: Objective) -> Result<Tensor> {
    match objective {
        Objective::Inpaint => stack_inputs(examples, None),
        Objective::Bandwidth => {
            let f = examples[0].stft.bins;
            let data = examples
                .iter()
                .flat_map(|e| e.target.as_deref().expect("checked").iter().copied())
                .collect();
            Tensor::new(data, &[examples.len(), f])
        }
    }
}

fn batch_loss(pred: &Tensor, target: &Tensor, objective: Objective, eps: f32) -> Result<Tensor> {
    match objective {
        Objective::Inpaint => mse_loss(pred, target),
        Objective::Bandwidth => bandwidth_loss(target, pred, eps),
    }
}

/// Fixed masks for validation, one per example.
pub fn validation_masks(n: usize, antennas: usize, seed: u64) -> Vec<usize> {
    let mut rng = stream_rng(seed, VAL_MASK_STREAM);
    (0..n).map(|_| draw_mask_antenna(&mut rng, antennas)).collect()
}

/// Per-example losses with the model as it is (no mode change, no graph).
fn example_losses<M: Model + ?Sized>(
    model: &M,
    examples: &[&Example],
    objective: Objective,
    masks: Option<&[usize]>,
    eps: f32,
    batch_size: usize,
) -> Result<Vec<f64>> {
    no_grad(|| {
        let mut out = Vec::with_capacity(examples.len());
        for (b, chunk) in examples.chunks(batch_size).enumerate() {
            let lo = b * batch_size;
            let x = stack_inputs(chunk, masks.map(|m| &m[lo..lo + chunk.len()]))?;
            let y = model.forward(&x)?;
            let target = stack_targets(chunk, objective)?;
            let per = y.len() / chunk.len();
            let (ys, ts) = (y.data(), target.data());
            for (yp, tp) in ys.chunks(per).zip(ts.chunks(per)) {
                out.push(match objective {
                    Objective::Inpaint => {
                        yp.iter().zip(tp).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum::<f64>() / per as f64
                    }
                    Objective::Bandwidth => bandwidth_loss_scalar(tp, yp, eps),
                });
            }
        }
        Ok(out)
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Trains `model` on a seeded split of `dataset`.
///
/// Each epoch visits the training split in a fresh shuffled order, one Adam
/// step per mini-batch; in-painting batches get a freshly drawn masked
/// antenna per example. The validation split is scored in eval mode after
/// every epoch with masks fixed for the whole run. When the validation loss
/// reaches a new minimum the weights are snapshotted (and written to
/// `checkpoint_path` if given). On return `model` holds the best weights.
pub fn train_loop<M: Model + ?Sized>(
    model: &mut M,
    dataset: &[Example],
    config: &TrainConfig,
    objective: Objective,
    checkpoint_path: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let all: Vec<&Example> = dataset.iter().collect();
    let [channels, _, _] = check_examples(&all, objective)?;
    let (train_idx, val_idx) = split_indices(dataset.len(), config.val_fraction, config.seed)?;
    let train: Vec<&Example> = train_idx.iter().map(|&i| &dataset[i]).collect();
    let val: Vec<&Example> = val_idx.iter().map(|&i| &dataset[i]).collect();
    let antennas = channels / 2;
    let val_masks = (objective == Objective::Inpaint).then(|| validation_masks(val.len(), antennas, config.seed));
    let eps = config.epsilon;

    let snapshot = |model: &M, epoch: usize, val_loss: f64| -> Result<Checkpoint> {
        let mut ck = Checkpoint::from_model(model);
        ck.metadata.extend(config.to_metadata());
        ck.set("epoch", epoch.to_string());
        ck.set("val_loss", format!("{val_loss:?}"));
        if let Some(p) = checkpoint_path {
            ck.save(p)?;
        }
        Ok(ck)
    };

    model.set_mode(NormMode::Eval);
    let initial = mean(&example_losses(model, &val, objective, val_masks.as_deref(), eps, config.batch_size)?);
    if !initial.is_finite() {
        return Err(Error::NonFinite(format!("initial validation loss {initial}")));
    }
    log::info!("epoch 0: val {initial:.6}");
    let mut best = snapshot(model, 0, initial)?;
    let mut schedule = PlateauSchedule::new(initial, config);
    let mut opt = Adam::new(model.trainable(), config.initial_lr);
    let mut rng = stream_rng(config.seed, SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut records = Vec::new();

    for epoch in 1..=config.max_epochs {
        let lr = schedule.lr();
        opt.set_lr(lr);
        model.set_mode(NormMode::Train);
        order.shuffle(&mut rng);
        let mut losses = Vec::new();
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Example> = chunk.iter().map(|&i| train[i]).collect();
            let masks: Option<Vec<usize>> = (objective == Objective::Inpaint)
                .then(|| batch.iter().map(|_| draw_mask_antenna(&mut rng, antennas)).collect());
            let x = stack_inputs(&batch, masks.as_deref())?;
            let target = stack_targets(&batch, objective)?;
            let loss = batch_loss(&model.forward(&x)?, &target, objective, eps)?;
            let value = loss.item();
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("loss {value} at epoch {epoch}, batch {b}")));
            }
            opt.zero_grad();
            loss.backward()?;
            opt.step()
                .map_err(|e| Error::NonFinite(format!("epoch {epoch}, batch {b}: {e}")))?;
            losses.push(value as f64);
        }
        opt.zero_grad();
        model.set_mode(NormMode::Eval);
        let val_loss = mean(&example_losses(model, &val, objective, val_masks.as_deref(), eps, config.batch_size)?);
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!("validation loss {val_loss} at epoch {epoch}")));
        }
        let step = schedule.observe(epoch, val_loss);
        if step.improved {
            best = snapshot(model, epoch, val_loss)?;
        }
        let train_loss = mean(&losses);
        log::info!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6} lr {lr}{}", if step.improved { " *" } else { "" });
        records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
            saved: step.improved,
        });
        if step.stop {
            break;
        }
    }
    best.apply_to(model)?;
    Ok(TrainOutcome {
        best,
        best_epoch: schedule.best_epoch(),
        best_val_loss: schedule.best(),
        initial_val_loss: initial,
        records,
        train_indices: train_idx,
        val_indices: val_idx,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mean: f64,
    /// Lowest per-example loss.
    pub best_case: f64,
    pub per_example: Vec<f64>,
}

/// Scores `model` in eval mode. In-painting masks are drawn from `seed`.
pub fn evaluate<M: Model + ?Sized>(
    model: &mut M,
    examples: &[Example],
    objective: Objective,
    epsilon: f32,
    seed: u64,
    batch_size: usize,
) -> Result<EvalReport> {
    let refs: Vec<&Example> = examples.iter().collect();
    let [channels, _, _] = check_examples(&refs, objective)?;
    let masks = (objective == Objective::Inpaint).then(|| validation_masks(refs.len(), channels / 2, seed));
    model.set_mode(NormMode::Eval);
    let per_example = example_losses(model, &refs, objective, masks.as_deref(), epsilon, batch_size.max(1))?;
    Ok(EvalReport {
        mean: mean(&per_example),
        best_case: per_example.iter().copied().fold(f64::INFINITY, f64::min),
        per_example,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schedule_cfg() -> TrainConfig {
        TrainConfig::pretrain()
    }

    #[test]
    fn flat_losses_stop_at_patience() {
        let mut s = PlateauSchedule::new(1.0, &schedule_cfg());
        let mut drops = Vec::new();
        let mut stopped = None;
        for e in 1..=100 {
            let step = s.observe(e, 1.0);
            if step.lr_dropped {
                drops.push(e);
            }
            if step.stop {
                stopped = Some(e);
                break;
            }
        }
        assert_eq!(stopped, Some(30));
        assert_eq!(drops, vec![10, 20]);
        assert!((s.lr() - 0.001 * 0.1 * 0.1).abs() < 1e-12);
    }

    #[test]
    fn split_sizes() {
        let (tr, va) = split_indices(77, 0.2, 5).unwrap();
        assert_eq!((tr.len(), va.len()), (62, 15));
        let mut all: Vec<usize> = tr.iter().chain(&va).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..77).collect::<Vec<_>>());
        assert_eq!(split_indices(77, 0.2, 5).unwrap(), (tr, va));
        assert!(split_indices(1, 0.2, 0).is_err());
    }

    #[test]
    fn bandwidth_loss_example_value() {
        let mut b = vec![0.0f32; 2048];
        b[7] = 1.0 / 2048.0;
        let p = vec![1.0f32; 2048];
        let v = bandwidth_loss_scalar(&b, &p, 1e-6);
        let expect = ((1.0f64 / 2048.0).ln() - (1.0f64 + 1e-6).ln()).powi(2);
        assert!((v - expect).abs() < 1e-9, "{v} {expect}");
        assert!((v - 58.13).abs() < 0.01);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::pretrain().validate().is_ok());
        assert_eq!(TrainConfig::transfer().initial_lr, 0.01);
        let mut c = TrainConfig::pretrain();
        c.val_fraction = 1.0;
        assert!(c.validate().is_err());
        c = TrainConfig::pretrain();
        c.epsilon = 0.0;
        assert!(c.validate().is_err());
    }
}
