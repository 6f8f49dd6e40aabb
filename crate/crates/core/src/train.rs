//! Training loops.
//!
//! Light CNNs train on shuffled, augmented single frames and are selected on
//! the balanced validation sample. CRNNs train on consecutive windows of the
//! training clips in temporal order, with the conv stack frozen, and are
//! selected on per-frame accuracy over whole validation clips.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{
    apply_augmentation, make_balanced_validation, preprocess_frame_at, window_sequences, AugmentConfig, AugmentParams,
    DataSplit, NeedleState, SplitKind, VideoClip,
};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::loss::{weighted_cross_entropy, ClassWeights};
use crate::model::{Checkpoint, CheckpointMeta, Crnn, LightCnn, LightCnnSpec, Model};
use crate::optim::{AdamConfig, AdamState};
use crate::tensor::Tensor;

pub const CNN_BATCH: usize = 32;
pub const CRNN_BATCH: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Frames per CNN batch or windows per CRNN batch; `None` picks 32 or 4.
    pub batch_size: Option<usize>,
    /// `None` derives weights from the training-set class counts.
    pub class_weights: Option<ClassWeights>,
    pub seed: u64,
    pub augment: Option<AugmentConfig>,
    /// CRNN only: keep the copied conv parameters fixed.
    pub freeze_conv: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            learning_rate: 1e-4,
            batch_size: None,
            class_weights: None,
            seed: 0,
            augment: Some(AugmentConfig::default()),
            freeze_conv: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == Some(0) {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            ..AdamConfig::default()
        }
    }

    fn weights(&self, split: &DataSplit) -> Result<ClassWeights> {
        match self.class_weights {
            Some(w) => Ok(w),
            None => ClassWeights::from_counts(split.class_counts(SplitKind::Train)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    /// Parameters of the best validation epoch.
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
}

impl TrainRun {
    pub fn best_val_acc(&self) -> f64 {
        self.checkpoint.meta.val_acc.unwrap_or(0.0)
    }
}

pub fn write_history_csv(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| Error::io(path, e.into()))?;
    for r in history {
        w.serialize(r).map_err(|e| Error::io(path, e.into()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn add_into(acc: &mut [Tensor<f32>], grads: &[Tensor<f32>]) {
    for (a, g) in acc.iter_mut().zip(grads) {
        for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
            *x += y;
        }
    }
}

fn scale(grads: &mut [Tensor<f32>], s: f32) {
    for g in grads {
        for v in g.data_mut() {
            *v *= s;
        }
    }
}

fn adam_step(adam: &mut AdamState<f32>, mut params: Vec<&mut Tensor<f32>>, grads: &[Tensor<f32>]) -> Result<()> {
    let mut p: Vec<&mut [f32]> = params.iter_mut().map(|t| t.data_mut()).collect();
    let g: Vec<&[f32]> = grads.iter().map(Tensor::data).collect();
    adam.step(&mut p, &g)
}

/// Mean weighted loss and mean parameter gradients over a batch of
/// preprocessed frames. Per-sample work runs in parallel and is summed in
/// sample order, so the result does not depend on the thread count.
pub fn cnn_batch_gradients(
    model: &LightCnn<f32>,
    batch: &[(Tensor<f32>, NeedleState)],
    weights: &ClassWeights,
) -> Result<(f64, Vec<Tensor<f32>>)> {
    let per_sample: Vec<(f64, Vec<Tensor<f32>>)> = batch
        .par_iter()
        .map(|(x, label)| {
            let (probs, trace) = model.forward_train(x)?;
            let (loss, grad_logits) = weighted_cross_entropy(&probs, *label, weights);
            Ok((loss as f64, model.backward(&trace, &grad_logits)?))
        })
        .collect::<Result<_>>()?;
    let mut iter = per_sample.into_iter();
    let (mut loss, mut grads) = iter.next().ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    for (l, g) in iter {
        loss += l;
        add_into(&mut grads, &g);
    }
    let n = batch.len() as f32;
    scale(&mut grads, 1.0 / n);
    Ok((loss / n as f64, grads))
}

/// Frame accuracy of a light CNN over preprocessed frames.
pub fn cnn_accuracy(model: &LightCnn<f32>, frames: &[(Tensor<f32>, NeedleState)]) -> Result<f64> {
    let correct = frames
        .par_iter()
        .map(|(x, l)| Ok(usize::from(model.classify(x)? == *l)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(correct as f64 / frames.len().max(1) as f64)
}

fn check_not_empty(split: &DataSplit) -> Result<()> {
    if split.train.is_empty() || split.validation.is_empty() {
        return Err(Error::InvalidArgument(
            "training needs at least one training and one validation clip".into(),
        ));
    }
    Ok(())
}

fn diverged(epoch: usize, batch: usize, loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence { epoch, batch, loss })
    }
}

fn shuffle_for_epoch(order: &mut [(usize, usize)], seed: u64, epoch: usize) {
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1, epoch as u64])));
}

pub fn train_cnn(spec: &LightCnnSpec, split: &DataSplit, config: &TrainConfig) -> Result<TrainRun> {
    train_cnn_observed(spec, split, config, |_| {})
}

/// [`train_cnn`] calling `observe` after every epoch.
pub fn train_cnn_observed(
    spec: &LightCnnSpec,
    split: &DataSplit,
    config: &TrainConfig,
    mut observe: impl FnMut(&EpochRecord),
) -> Result<TrainRun> {
    config.validate()?;
    check_not_empty(split)?;
    let weights = config.weights(split)?;
    let side = spec.input_side();
    let batch_size = config.batch_size.unwrap_or(CNN_BATCH);

    let mut model = LightCnn::new(spec, &mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[0])));
    let lengths: Vec<usize> = model.parameters().iter().map(|(_, t)| t.len()).collect();
    let mut adam = AdamState::new(config.adam(), &lengths);

    let val_labels: Vec<&[NeedleState]> = split.validation.iter().map(|c| c.labels.as_slice()).collect();
    let val_frames: Vec<(Tensor<f32>, NeedleState)> = make_balanced_validation(&val_labels, derive_seed(config.seed, &[2]))?
        .par_iter()
        .map(|r| {
            let clip = &split.validation[r.clip];
            (preprocess_frame_at(&clip.frames[r.frame], side), clip.labels[r.frame])
        })
        .collect();

    let mut order: Vec<(usize, usize)> = split
        .train
        .iter()
        .enumerate()
        .flat_map(|(c, clip)| (0..clip.len()).map(move |f| (c, f)))
        .collect();

    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(LightCnn<f32>, usize, f64)> = None;
    for epoch in 1..=config.epochs {
        shuffle_for_epoch(&mut order, config.seed, epoch);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for (b, chunk) in order.chunks(batch_size).enumerate() {
            let batch: Vec<(Tensor<f32>, NeedleState)> = chunk
                .par_iter()
                .enumerate()
                .map(|(i, &(c, f))| {
                    let clip = &split.train[c];
                    let frame = &clip.frames[f];
                    let input = match &config.augment {
                        Some(aug) => {
                            let sample = (b * batch_size + i) as u64;
                            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[3, epoch as u64, sample]));
                            preprocess_frame_at(&apply_augmentation(frame, &AugmentParams::sample(aug, &mut rng)), side)
                        }
                        None => preprocess_frame_at(frame, side),
                    };
                    (input, clip.labels[f])
                })
                .collect();
            let (loss, grads) = cnn_batch_gradients(&model, &batch, &weights)?;
            diverged(epoch, b, loss)?;
            adam_step(&mut adam, model.parameters_mut(), &grads)?;
            loss_sum += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        let val_acc = cnn_accuracy(&model, &val_frames)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / seen as f64,
            val_acc,
        };
        observe(&record);
        history.push(record);
        if best.as_ref().is_none_or(|(_, _, acc)| val_acc > *acc) {
            best = Some((model.clone(), epoch, val_acc));
        }
    }
    let (model, epoch, val_acc) = best.expect("at least one epoch");
    Ok(TrainRun {
        checkpoint: Checkpoint::new(
            Model::LightCnn(model),
            CheckpointMeta {
                epoch: Some(epoch),
                val_acc: Some(val_acc),
                seed: config.seed,
                ..CheckpointMeta::default()
            },
        ),
        history,
    })
}

/// Conv features of every frame of every clip.
fn clip_features(crnn: &Crnn<f32>, clips: &[VideoClip]) -> Result<Vec<Vec<f32>>> {
    let side = crnn.spec().base.input_side();
    clips
        .iter()
        .map(|clip| {
            let rows: Vec<Vec<f32>> = clip
                .frames
                .par_iter()
                .map(|f| crnn.features(&preprocess_frame_at(f, side)))
                .collect::<Result<_>>()?;
            Ok(rows.concat())
        })
        .collect()
}

/// Per-frame predictions over whole clips with the LSTM state carried from
/// the first frame to the last.
fn crnn_predict_features(crnn: &Crnn<f32>, features: &[f32], frames: usize) -> Result<Vec<NeedleState>> {
    let mut state = crnn.zero_state();
    let probs = crnn.forward_sequence(&mut state, features, frames)?;
    Ok(probs.chunks_exact(NeedleState::COUNT).map(NeedleState::argmax).collect())
}

fn crnn_accuracy(crnn: &Crnn<f32>, clips: &[VideoClip], features: &[Vec<f32>]) -> Result<f64> {
    let (mut correct, mut total) = (0usize, 0usize);
    for (clip, feats) in clips.iter().zip(features) {
        let pred = crnn_predict_features(crnn, feats, clip.len())?;
        correct += pred.iter().zip(&clip.labels).filter(|(p, l)| p == l).count();
        total += clip.len();
    }
    Ok(correct as f64 / total.max(1) as f64)
}

struct Window<'a> {
    clip: usize,
    frames: Vec<usize>,
    labels: Vec<NeedleState>,
    valid: Vec<bool>,
    source: &'a VideoClip,
}

pub fn train_crnn(base: &LightCnn<f32>, time_steps: usize, split: &DataSplit, config: &TrainConfig) -> Result<TrainRun> {
    train_crnn_observed(base, time_steps, split, config, |_| {})
}

/// [`train_crnn`] calling `observe` after every epoch.
pub fn train_crnn_observed(
    base: &LightCnn<f32>,
    time_steps: usize,
    split: &DataSplit,
    config: &TrainConfig,
    mut observe: impl FnMut(&EpochRecord),
) -> Result<TrainRun> {
    config.validate()?;
    check_not_empty(split)?;
    let weights = config.weights(split)?;
    let batch_size = config.batch_size.unwrap_or(CRNN_BATCH);
    let mut model = Crnn::from_base(base, time_steps, &mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[0])))?;
    train_crnn_model(&mut model, split, config, &weights, batch_size, &mut observe)
}

/// Trains a CRNN on any conv base; [`train_crnn`] checks that the base is
/// the ⟨16-32-32⟩ network first.
pub fn train_crnn_model(
    model: &mut Crnn<f32>,
    split: &DataSplit,
    config: &TrainConfig,
    weights: &ClassWeights,
    batch_size: usize,
    observe: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainRun> {
    config.validate()?;
    check_not_empty(split)?;
    let frozen = config.freeze_conv;
    model.set_conv_frozen(frozen);
    let time_steps = model.spec().time_steps;
    let side = model.spec().base.input_side();

    let head_lengths: Vec<usize> = model.head_parameters().iter().map(|(_, t)| t.len()).collect();
    let conv_lengths: Vec<usize> = model.convs().parameters().iter().map(|(_, t)| t.len()).collect();
    let mut adam_head = AdamState::new(config.adam(), &head_lengths);
    let mut adam_conv = AdamState::new(config.adam(), &conv_lengths);

    let mut windows = Vec::new();
    for (c, clip) in split.train.iter().enumerate() {
        for w in window_sequences(&clip.labels, time_steps)? {
            windows.push(Window {
                clip: c,
                frames: w.frames,
                labels: w.labels,
                valid: w.valid,
                source: clip,
            });
        }
    }

    let mut train_features = if frozen { clip_features(model, &split.train)? } else { Vec::new() };
    let mut val_features = clip_features(model, &split.validation)?;
    let feature_len = model.feature_len();

    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(Crnn<f32>, usize, f64)> = None;
    for epoch in 1..=config.epochs {
        let mut loss_sum = 0.0;
        let mut steps_seen = 0usize;
        for (b, chunk) in windows.chunks(batch_size).enumerate() {
            let valid_steps: usize = chunk.iter().map(|w| w.valid.iter().filter(|&&v| v).count()).sum();
            let norm = 1.0 / valid_steps as f32;
            let per_window: Vec<(f64, Vec<Tensor<f32>>, Option<Vec<Tensor<f32>>>)> = chunk
                .par_iter()
                .enumerate()
                .map(|(i, w)| {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                        config.seed,
                        &[4, epoch as u64, (b * batch_size + i) as u64],
                    ));
                    let (feats, traces) = if frozen {
                        let all = &train_features[w.clip];
                        let feats: Vec<f32> = w
                            .frames
                            .iter()
                            .flat_map(|&f| all[f * feature_len..(f + 1) * feature_len].iter().copied())
                            .collect();
                        (feats, None)
                    } else {
                        let mut feats = Vec::with_capacity(time_steps * feature_len);
                        let mut traces = Vec::with_capacity(time_steps);
                        for &f in &w.frames {
                            let x = preprocess_frame_at(&w.source.frames[f], side);
                            let (row, trace) = model.convs().features_train(&x)?;
                            feats.extend(row);
                            traces.push(trace);
                        }
                        (feats, Some(traces))
                    };
                    let (probs, trace) = model.forward_window(&feats, time_steps, true, &mut rng)?;
                    let mut loss = 0.0;
                    let mut grad_logits = vec![0.0f32; time_steps * NeedleState::COUNT];
                    for t in 0..time_steps {
                        if !w.valid[t] {
                            continue;
                        }
                        let p = &probs[t * 3..t * 3 + 3];
                        let (l, g) = weighted_cross_entropy(p, w.labels[t], weights);
                        loss += l as f64;
                        for (d, v) in grad_logits[t * 3..t * 3 + 3].iter_mut().zip(g) {
                            *d = v * norm;
                        }
                    }
                    let grads = model.backward_window(&trace, &grad_logits)?;
                    let conv_grads = match traces {
                        Some(traces) => {
                            let mut acc: Option<Vec<Tensor<f32>>> = None;
                            for (t, trace) in traces.iter().enumerate() {
                                let g = model.convs().backward(
                                    trace,
                                    &grads.grad_features[t * feature_len..(t + 1) * feature_len],
                                )?;
                                match &mut acc {
                                    Some(a) => add_into(a, &g),
                                    None => acc = Some(g),
                                }
                            }
                            acc
                        }
                        None => None,
                    };
                    Ok((loss, grads.head, conv_grads))
                })
                .collect::<Result<_>>()?;

            let mut iter = per_window.into_iter();
            let (mut loss, mut head, mut conv) = iter.next().expect("non-empty chunk");
            for (l, h, c) in iter {
                loss += l;
                add_into(&mut head, &h);
                if let (Some(acc), Some(c)) = (conv.as_mut(), c) {
                    add_into(acc, &c);
                }
            }
            let mean_loss = loss / valid_steps as f64;
            diverged(epoch, b, mean_loss)?;
            adam_step(&mut adam_head, model.head_parameters_mut(), &head)?;
            if let Some(conv) = conv {
                adam_step(&mut adam_conv, model.convs_mut().parameters_mut(), &conv)?;
            }
            loss_sum += loss;
            steps_seen += valid_steps;
        }
        if !frozen {
            val_features = clip_features(model, &split.validation)?;
            train_features.clear();
        }
        let val_acc = crnn_accuracy(model, &split.validation, &val_features)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / steps_seen.max(1) as f64,
            val_acc,
        };
        observe(&record);
        history.push(record);
        if best.as_ref().is_none_or(|(_, _, acc)| val_acc > *acc) {
            best = Some((model.clone(), epoch, val_acc));
        }
    }
    let (best_model, epoch, val_acc) = best.expect("at least one epoch");
    *model = best_model.clone();
    Ok(TrainRun {
        checkpoint: Checkpoint::new(
            Model::Crnn(best_model),
            CheckpointMeta {
                epoch: Some(epoch),
                val_acc: Some(val_acc),
                seed: config.seed,
                ..CheckpointMeta::default()
            },
        ),
        history,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub time_steps: usize,
    pub best_val_acc: f64,
    pub best_epoch: usize,
}

/// One independent CRNN run per time-step count, all from the same base and
/// seed.
pub fn sweep_crnn_timesteps(
    base: &LightCnn<f32>,
    time_steps: &[usize],
    split: &DataSplit,
    config: &TrainConfig,
) -> Result<Vec<SweepRow>> {
    if let Some(&t) = time_steps.iter().find(|&&t| t == 0) {
        return Err(Error::InvalidArgument(format!("time steps must be at least 1, got {t}")));
    }
    time_steps
        .iter()
        .map(|&t| {
            let run = train_crnn(base, t, split, config)?;
            Ok(SweepRow {
                time_steps: t,
                best_val_acc: run.best_val_acc(),
                best_epoch: run.checkpoint.meta.epoch.unwrap_or(0),
            })
        })
        .collect()
}

/// The row with the highest validation accuracy; ties go to the smaller T.
pub fn select_time_steps(rows: &[SweepRow]) -> Option<SweepRow> {
    rows.iter().copied().reduce(|best, r| {
        if r.best_val_acc > best.best_val_acc || (r.best_val_acc == best.best_val_acc && r.time_steps < best.time_steps) {
            r
        } else {
            best
        }
    })
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| Error::io(path, e.into()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::io(path, e.into()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
