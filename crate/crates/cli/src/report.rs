//! Text tables and JSON report shapes for the subcommands.

use evgest_core::eval::{ConfusionMatrix, Outcome, PrecisionRecall, SplitEvaluation, TrialRecord, TrialReport};
use evgest_core::pipeline::{BenchReport, DetectionEvent, PipelineStats};
use evgest_core::simulator::GestureClass;
use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt::Write;

#[derive(Serialize)]
pub struct DetectionLine {
    pub gesture: GestureClass,
    pub probability: f32,
    pub t_us: u64,
    pub latency_us: u64,
}

impl From<&DetectionEvent> for DetectionLine {
    fn from(d: &DetectionEvent) -> Self {
        Self { gesture: d.gesture, probability: d.probability, t_us: d.t_us, latency_us: d.latency_us }
    }
}

#[derive(Serialize)]
pub struct EvalMetrics<'a> {
    pub accuracy: Option<f64>,
    pub windows: u64,
    pub mean_gesture_loss: f64,
    pub mean_bbox_loss: f64,
    pub per_class: &'a BTreeMap<GestureClass, PrecisionRecall>,
}

#[derive(Serialize)]
pub struct EvalJson<'a> {
    pub metrics: EvalMetrics<'a>,
    /// Rows are true classes, columns predictions, both in class index order.
    pub matrix: &'a ConfusionMatrix,
    pub classes: Vec<&'static str>,
}

impl<'a> EvalJson<'a> {
    pub fn new(e: &'a SplitEvaluation) -> Self {
        Self {
            metrics: EvalMetrics {
                accuracy: e.accuracy,
                windows: e.matrix.total(),
                mean_gesture_loss: e.mean_gesture_loss,
                mean_bbox_loss: e.mean_bbox_loss,
                per_class: &e.per_class,
            },
            matrix: &e.matrix,
            classes: GestureClass::ALL.iter().map(|c| c.code()).collect(),
        }
    }
}

#[derive(Serialize)]
pub struct TrialJson<'a> {
    pub metrics: &'a evgest_core::eval::TrialSummary,
    pub records: &'a [TrialRecord],
    pub detections: &'a [DetectionEvent],
    pub pipeline: &'a PipelineStats,
    pub config: &'a evgest_core::eval::TrialConfig,
}

impl<'a> TrialJson<'a> {
    pub fn new(r: &'a TrialReport) -> Self {
        Self {
            metrics: &r.summary,
            records: &r.records,
            detections: &r.detections,
            pipeline: &r.pipeline,
            config: &r.config,
        }
    }
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "    -".into(), |v| format!("{:5.1}", 100.0 * v))
}

fn pr_rows(out: &mut String, rows: &BTreeMap<GestureClass, PrecisionRecall>) {
    let _ = writeln!(out, "{:<14} {:>9} {:>6} {:>9} {:>6}", "class", "precision", "n", "recall", "n");
    for (c, pr) in rows {
        let _ = writeln!(
            out,
            "{:<14} {:>8}% {:>6} {:>8}% {:>6}",
            c.name(),
            pct(pr.precision.value),
            pr.precision.n,
            pct(pr.recall.value),
            pr.recall.n
        );
    }
}

pub fn eval_text(e: &SplitEvaluation) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "accuracy {}% over {} windows", pct(e.accuracy).trim(), e.matrix.total());
    let _ = writeln!(out, "mean gesture loss {:.4}, mean box loss {:.4}\n", e.mean_gesture_loss, e.mean_bbox_loss);
    let _ = write!(out, "{:>6}", "");
    for c in GestureClass::ALL {
        let _ = write!(out, "{:>6}", c.code());
    }
    out.push('\n');
    for (i, row) in e.matrix.counts.iter().enumerate() {
        let _ = write!(out, "{:>6}", GestureClass::ALL[i].code());
        for n in row {
            let _ = write!(out, "{n:>6}");
        }
        out.push('\n');
    }
    out.push('\n');
    pr_rows(&mut out, &e.per_class);
    out
}

pub fn trial_text(r: &TrialReport) -> String {
    let mut out = String::new();
    for rec in &r.records {
        let p = rec.prompt;
        let outcome = match rec.outcome {
            Outcome::Hit { latency_us } => format!("hit after {:.0} ms", latency_us as f64 * 1e-3),
            Outcome::Failure { observed } => format!("failure ({})", observed.name()),
            Outcome::Timeout => "timeout".to_string(),
        };
        let _ = writeln!(out, "{:>3}  {:<14} {:>7.2} s  {}", p.index, p.gesture.name(), p.window_start_us as f64 * 1e-6, outcome);
    }
    out.push('\n');
    pr_rows(&mut out, &r.summary.per_gesture);
    let spurious: u64 = r.summary.spurious.values().sum();
    let _ = writeln!(out, "\n{} detections outside response windows", spurious);
    out
}

pub fn bench_text(r: &BenchReport, stride_us: u64) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} repetitions x {} strides", r.repetitions, r.strides_per_repetition);
    for (name, d) in [("compute", &r.compute_us), ("latency", &r.latency_us)] {
        let _ = writeln!(
            out,
            "{name:<8} mean {:>8.1} us  p50 {:>8.0} us  p95 {:>8.0} us  max {:>8.0} us",
            d.mean, d.p50, d.p95, d.max
        );
    }
    let _ = writeln!(out, "real-time factor {:.1} at a {} ms stride", r.real_time_factor, stride_us / 1000);
    out
}
