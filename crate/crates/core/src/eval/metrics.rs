use crate::model::{loss, GestureModel, LabeledSurface, ModelConfig, TrainError};
use crate::representation::AggregatorConfig;
use crate::simulator::{DatasetManifest, GestureClass, Split, NUM_CLASSES};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Rows are true classes, columns predicted classes, both in canonical order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn add(&mut self, truth: GestureClass, predicted: GestureClass) {
        self.counts[truth.index()][predicted.index()] += 1;
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (r, o) in self.counts.iter_mut().zip(&other.counts) {
            for (a, b) in r.iter_mut().zip(o) {
                *a += b;
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, class: GestureClass) -> u64 {
        self.counts[class.index()].iter().sum()
    }

    pub fn col_sum(&self, class: GestureClass) -> u64 {
        self.counts.iter().map(|r| r[class.index()]).sum()
    }

    /// `trace / total`; undefined for an empty matrix.
    pub fn accuracy(&self) -> Option<f64> {
        let total = self.total();
        (total > 0).then(|| self.trace() as f64 / total as f64)
    }

    /// Per-class precision (over the predicted column) and recall (over the true row).
    pub fn precision_recall(&self) -> BTreeMap<GestureClass, PrecisionRecall> {
        GestureClass::ALL
            .into_iter()
            .map(|c| {
                let tp = self.counts[c.index()][c.index()];
                (c, PrecisionRecall { precision: Rate::new(tp, self.col_sum(c)), recall: Rate::new(tp, self.row_sum(c)) })
            })
            .collect()
    }
}

/// A binomial proportion with its standard error; `None` when `n == 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub successes: u64,
    pub n: u64,
    pub value: Option<f64>,
    pub std_error: Option<f64>,
}

impl Rate {
    pub fn new(successes: u64, n: u64) -> Self {
        if n == 0 {
            return Self { successes, n, value: None, std_error: None };
        }
        let p = successes as f64 / n as f64;
        Self { successes, n, value: Some(p), std_error: Some((p * (1.0 - p) / n as f64).sqrt()) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub precision: Rate,
    pub recall: Rate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEvaluation {
    pub accuracy: Option<f64>,
    pub matrix: ConfusionMatrix,
    pub mean_gesture_loss: f64,
    pub mean_bbox_loss: f64,
    pub per_class: BTreeMap<GestureClass, PrecisionRecall>,
}

/// Per-surface evaluation in inference mode.
pub fn evaluate_samples(model: &GestureModel, samples: &[LabeledSurface], lambda: f64) -> SplitEvaluation {
    let outputs: Vec<_> = samples
        .par_iter()
        .map(|s| {
            let out = model.predict(&s.surface).expect("surfaces match the model geometry");
            (out.predicted_class(), loss(&out, &s.target, lambda))
        })
        .collect();
    let mut matrix = ConfusionMatrix::default();
    let (mut g, mut b, mut hands) = (0.0, 0.0, 0usize);
    for (s, (pred, l)) in samples.iter().zip(&outputs) {
        matrix.add(s.target.label, *pred);
        g += l.gesture;
        if s.target.label.has_hand() && s.target.bbox.is_some() {
            b += l.bbox;
            hands += 1;
        }
    }
    SplitEvaluation {
        accuracy: matrix.accuracy(),
        per_class: matrix.precision_recall(),
        matrix,
        mean_gesture_loss: if samples.is_empty() { 0.0 } else { g / samples.len() as f64 },
        mean_bbox_loss: if hands == 0 { 0.0 } else { b / hands as f64 },
    }
}

/// Loads one split of a dataset and evaluates `model` on its supervision windows.
pub fn evaluate_split(
    model: &GestureModel,
    manifest: &DatasetManifest,
    split: Split,
    aggregator: &AggregatorConfig,
) -> Result<SplitEvaluation, TrainError> {
    let config: &ModelConfig = model.config();
    if manifest.geometry != config.geometry {
        return Err(TrainError::GeometryMismatch {
            dataset_w: manifest.geometry.width,
            dataset_h: manifest.geometry.height,
            model_w: config.geometry.width,
            model_h: config.geometry.height,
        });
    }
    let samples = crate::model::load_split(manifest, split, aggregator)?;
    if samples.is_empty() {
        return Err(TrainError::EmptySplit(split));
    }
    Ok(evaluate_samples(model, &samples, 1.0))
}
