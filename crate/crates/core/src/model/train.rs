use super::config::{ConfigError, ModelConfig};
use super::network::{loss, ForwardOptions, LossScales, Network, Target};
use super::optim::{adam_step, lr_schedule, AdamState, CropSource, TrainConfig, TrainConfigError};
use super::params::ModelParams;
use crate::events::EventStream;
use crate::representation::{build_time_surface, AggregatorConfig, AggregatorError, TimeSurface};
use crate::seed;
use crate::simulator::{DatasetError, DatasetManifest, GestureClass, ManifestEntry, ScenarioSpec, Split};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Samples per parallel work unit. Fixed so gradient sums are reduced in the
/// same order regardless of thread count.
const GRAD_CHUNK: usize = 8;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ConfigError),
    #[error(transparent)]
    Train(#[from] TrainConfigError),
    #[error(transparent)]
    Aggregator(#[from] AggregatorError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("the {0} split is empty")]
    EmptySplit(Split),
    #[error("dataset geometry {dataset_w}x{dataset_h} does not match the model's {model_w}x{model_h}")]
    GeometryMismatch { dataset_w: u16, dataset_h: u16, model_w: u16, model_h: u16 },
    #[error("sample {0} produced no time surface")]
    NoSurface(String),
}

/// One time surface with its supervision.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSurface {
    pub surface: TimeSurface,
    pub target: Target,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub train_gesture_loss: f64,
    pub train_bbox_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_gesture_loss: f64,
    pub val_bbox_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation accuracy.
    pub params: ModelParams<f32>,
    pub best_epoch: usize,
    pub history: Vec<EpochMetrics>,
}

/// Window ends used to supervise a scenario of `duration_us`: the scenario
/// end, then every stride while the window still reaches back to time 0.
pub fn supervision_window_ends(duration_us: u64, agg: &AggregatorConfig) -> Vec<u64> {
    let mut ends = vec![duration_us];
    let mut t = duration_us + agg.stride;
    while t <= agg.window_length {
        ends.push(t);
        t += agg.stride;
    }
    ends
}

/// Labeled surfaces of one recorded scenario.
pub fn labeled_surfaces(spec: &ScenarioSpec, stream: &EventStream, agg: &AggregatorConfig) -> Vec<LabeledSurface> {
    let duration_us = (spec.duration * 1e6).round() as u64;
    supervision_window_ends(duration_us, agg)
        .into_iter()
        .map(|t_l| {
            let surface = build_time_surface(stream, t_l, agg.window_length);
            let t0 = t_l.saturating_sub(agg.window_length) as f64 * 1e-6;
            let bbox = spec.hand_box(t0, t_l as f64 * 1e-6);
            LabeledSurface { surface, target: Target { label: spec.label, bbox } }
        })
        .collect()
}

/// Fraction of a gesture a window must contain to carry the gesture's label.
pub const TRANSITION_COVERAGE: f64 = 0.8;

/// Up to `count` windows of one scenario that streaming inference sees while
/// the gesture is still unfolding or already ageing out, drawn at a random
/// stride phase. `NoHand`, `HandUnknown` and `Rest` look the same over any
/// part of their span and keep their label. Other gestures keep theirs when
/// the window holds at least [`TRANSITION_COVERAGE`] of the scenario and
/// become `HandUnknown` otherwise.
pub fn transition_surfaces(
    spec: &ScenarioSpec,
    stream: &EventStream,
    agg: &AggregatorConfig,
    count: usize,
    seed: u64,
) -> Vec<LabeledSurface> {
    if count == 0 {
        return Vec::new();
    }
    let duration_us = (spec.duration * 1e6).round() as u64;
    let full = supervision_window_ends(duration_us, agg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, &[spec.seed]));
    let phase = rng.random_range(0..agg.stride);
    let mut ends: Vec<u64> = (0..)
        .map(|k| phase + k * agg.stride)
        .skip_while(|&t| t == 0)
        .take_while(|&t| t < duration_us + agg.window_length)
        .filter(|t| !full.contains(t))
        .collect();
    ends.shuffle(&mut rng);
    ends.truncate(count);
    ends.sort_unstable();
    ends.into_iter()
        .map(|t_l| {
            let start = t_l.saturating_sub(agg.window_length);
            let covered = t_l.min(duration_us).saturating_sub(start) as f64 / duration_us as f64;
            let label = if covered >= TRANSITION_COVERAGE || is_steady(spec.label) {
                spec.label
            } else {
                GestureClass::HandUnknown
            };
            let surface = build_time_surface(stream, t_l, agg.window_length);
            let bbox = spec.hand_box(start as f64 * 1e-6, t_l as f64 * 1e-6);
            LabeledSurface { surface, target: Target { label, bbox } }
        })
        .collect()
}

fn is_steady(class: GestureClass) -> bool {
    matches!(class, GestureClass::NoHand | GestureClass::HandUnknown | GestureClass::Rest)
}

pub fn load_split(
    manifest: &DatasetManifest,
    split: Split,
    agg: &AggregatorConfig,
) -> Result<Vec<LabeledSurface>, TrainError> {
    load_split_with_transitions(manifest, split, agg, 0, 0)
}

/// Full supervision windows of every scenario in `split`, plus `transitions`
/// transition windows per scenario.
pub fn load_split_with_transitions(
    manifest: &DatasetManifest,
    split: Split,
    agg: &AggregatorConfig,
    transitions: usize,
    seed: u64,
) -> Result<Vec<LabeledSurface>, TrainError> {
    agg.validate()?;
    let entries: Vec<&ManifestEntry> = manifest.split(split).collect();
    let per_entry: Vec<Vec<LabeledSurface>> = entries
        .par_iter()
        .map(|e| {
            let stream = manifest.read_stream(e)?;
            let mut s = labeled_surfaces(&e.spec, &stream, agg);
            if s.is_empty() {
                return Err(TrainError::NoSurface(e.path.display().to_string()));
            }
            s.extend(transition_surfaces(&e.spec, &stream, agg, transitions, seed));
            Ok(s)
        })
        .collect::<Result<_, TrainError>>()?;
    Ok(per_entry.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Copy, Default)]
struct Totals {
    gesture: f64,
    bbox: f64,
    hand_count: usize,
    correct: usize,
    count: usize,
}

impl Totals {
    fn add(&mut self, o: &Totals) {
        self.gesture += o.gesture;
        self.bbox += o.bbox;
        self.hand_count += o.hand_count;
        self.correct += o.correct;
        self.count += o.count;
    }

    fn means(&self, lambda: f64) -> (f64, f64, f64, f64) {
        let g = self.gesture / self.count.max(1) as f64;
        let b = if self.hand_count > 0 { self.bbox / self.hand_count as f64 } else { 0.0 };
        (g + lambda * b, g, b, self.correct as f64 / self.count.max(1) as f64)
    }
}

fn record(totals: &mut Totals, out: &super::ModelOutput<f32>, target: &Target, lambda: f64) {
    let l = loss(out, target, lambda);
    totals.gesture += l.gesture;
    if target.label.has_hand() && target.bbox.is_some() {
        totals.bbox += l.bbox;
        totals.hand_count += 1;
    }
    totals.correct += usize::from(out.predicted_class() == target.label);
    totals.count += 1;
}

/// Inference-mode losses and accuracy over `samples`.
fn evaluate(net: &Network, params: &ModelParams<f32>, samples: &[LabeledSurface], lambda: f64) -> Result<Totals, ConfigError> {
    let parts: Vec<Totals> = samples
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut t = Totals::default();
            for s in chunk {
                let out = net.forward(params, &s.surface, &ForwardOptions::inference())?;
                record(&mut t, &out, &s.target, lambda);
            }
            Ok(t)
        })
        .collect::<Result<_, ConfigError>>()?;
    let mut total = Totals::default();
    for p in &parts {
        total.add(p);
    }
    Ok(total)
}

/// Per-surface accuracy of `params` on `samples` (argmax of the final distribution).
pub fn accuracy(net: &Network, params: &ModelParams<f32>, samples: &[LabeledSurface]) -> Result<f64, ConfigError> {
    Ok(evaluate(net, params, samples, 1.0)?.means(1.0).3)
}

/// Trains on pre-built surfaces. `on_epoch` sees each epoch's metrics as they are produced.
pub fn train_on_samples(
    model: &ModelConfig,
    config: &TrainConfig,
    train: &[LabeledSurface],
    val: &[LabeledSurface],
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptySplit(Split::Train));
    }
    if val.is_empty() {
        return Err(TrainError::EmptySplit(Split::Val));
    }
    let net = Network::new(model)?;
    let mut params = ModelParams::<f32>::init(net.architecture(), seed::derive(config.seed, &[0]));
    let mut adam = AdamState::new(&params);
    let mut best: Option<(f64, usize, ModelParams<f32>)> = None;
    let mut history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..config.epochs {
        let lr = lr_schedule(epoch, config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(config.seed, &[1, epoch as u64]));
        order.shuffle(&mut rng);
        let mut totals = Totals::default();

        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let hand = batch.iter().filter(|&&i| train[i].target.label.has_hand() && train[i].target.bbox.is_some()).count();
            let scales = LossScales {
                gesture: 1.0 / batch.len() as f64,
                bbox: if hand > 0 { config.lambda / hand as f64 } else { 0.0 },
            };
            let parts: Vec<(ModelParams<f32>, Totals)> = batch
                .par_chunks(GRAD_CHUNK)
                .enumerate()
                .map(|(c, chunk)| {
                    let mut grads = params.zeros_like();
                    let mut t = Totals::default();
                    for (j, &i) in chunk.iter().enumerate() {
                        let s = &train[i];
                        let crop = match config.crop_source {
                            CropSource::Target => s.target.bbox.filter(|_| s.target.label.has_hand()),
                            CropSource::Predicted => None,
                        };
                        let dropout_seed = seed::derive(config.seed, &[2, epoch as u64, b as u64, (c * GRAD_CHUNK + j) as u64]);
                        let opts = ForwardOptions { crop, ..ForwardOptions::training(dropout_seed) };
                        let cache = net.forward_cached(&params, &s.surface, &opts)?;
                        record(&mut t, &cache.output, &s.target, config.lambda);
                        net.backward(&params, &cache, &s.target, scales, &mut grads);
                    }
                    Ok((grads, t))
                })
                .collect::<Result<_, ConfigError>>()?;
            let mut parts = parts.into_iter();
            let (mut grads, t0) = parts.next().expect("non-empty batch");
            totals.add(&t0);
            for (g, t) in parts {
                grads.add_scaled(&g, 1.0);
                totals.add(&t);
            }
            adam_step(&mut params, &grads, &mut adam, lr);
        }

        let (train_loss, train_gesture_loss, train_bbox_loss, train_accuracy) = totals.means(config.lambda);
        let (val_loss, val_gesture_loss, val_bbox_loss, val_accuracy) =
            evaluate(&net, &params, val, config.lambda)?.means(config.lambda);
        let m = EpochMetrics {
            epoch,
            learning_rate: lr,
            train_loss,
            train_gesture_loss,
            train_bbox_loss,
            train_accuracy,
            val_loss,
            val_gesture_loss,
            val_bbox_loss,
            val_accuracy,
        };
        on_epoch(&m);
        if best.as_ref().is_none_or(|(acc, _, _)| val_accuracy > *acc) {
            best = Some((val_accuracy, epoch, params.clone()));
        }
        history.push(m);
    }
    let (_, best_epoch, params) = best.expect("at least one epoch");
    Ok(TrainOutcome { params, best_epoch, history })
}

pub fn train(
    manifest: &DatasetManifest,
    model: &ModelConfig,
    config: &TrainConfig,
    agg: &AggregatorConfig,
    on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome, TrainError> {
    model.validate()?;
    if manifest.geometry != model.geometry {
        return Err(TrainError::GeometryMismatch {
            dataset_w: manifest.geometry.width,
            dataset_h: manifest.geometry.height,
            model_w: model.geometry.width,
            model_h: model.geometry.height,
        });
    }
    let train = load_split_with_transitions(manifest, Split::Train, agg, config.transition_windows, config.seed)?;
    let val = load_split(manifest, Split::Val, agg)?;
    train_on_samples(model, config, &train, &val, on_epoch)
}
