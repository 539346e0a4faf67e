//! Streaming inference: a sliding window cursor over incoming events, one
//! model evaluation per stride, thresholding with per-class refractory
//! suppression, and latency accounting.

use crate::events::{Event, EventStream, SensorGeometry};
use crate::model::GestureModel;
use crate::representation::{build_from_slice, slide, window_ends, AggregatorConfig, AggregatorError, TimeSurface};
use crate::simulator::{GestureClass, NUM_CLASSES};
use crossbeam::channel::{bounded, unbounded, Receiver, SendError, Sender, TryRecvError};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, VecDeque};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Instant;
use thiserror::Error;

pub const DEFAULT_THRESHOLD: f32 = 0.7;
pub const DEFAULT_REFRACTORY_US: u64 = 500_000;

/// Anything that maps a time surface to the 7-way class distribution.
pub trait SurfaceClassifier: Send + Sync {
    fn geometry(&self) -> SensorGeometry;
    fn classify(&self, surface: &TimeSurface) -> [f32; NUM_CLASSES];
}

impl SurfaceClassifier for GestureModel {
    fn geometry(&self) -> SensorGeometry {
        self.config().geometry
    }

    fn classify(&self, surface: &TimeSurface) -> [f32; NUM_CLASSES] {
        self.predict(surface).expect("pipeline checks geometry up front").final_probs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    /// Per emittable class.
    pub thresholds: BTreeMap<GestureClass, f32>,
    /// Suppression after a firing of the same class, µs of stream time.
    pub refractory_us: u64,
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        Self::uniform(DEFAULT_THRESHOLD)
    }
}

impl ThresholdPolicy {
    pub fn uniform(threshold: f32) -> Self {
        let thresholds = GestureClass::ALL.into_iter().filter(|c| c.is_emittable()).map(|c| (c, threshold)).collect();
        Self { thresholds, refractory_us: DEFAULT_REFRACTORY_US }
    }

    pub fn threshold(&self, class: GestureClass) -> Option<f32> {
        self.thresholds.get(&class).copied()
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        for (c, t) in &self.thresholds {
            if !c.is_emittable() {
                return Err(PipelineError::Policy(format!("{c} can never be emitted")));
            }
            if !(*t > 0.0 && *t < 1.0) {
                return Err(PipelineError::Policy(format!("threshold for {c} must be in (0, 1), got {t}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverrunPolicy {
    /// Evaluate every window in order.
    ProcessAll,
    /// When several windows are due at once, evaluate only the newest.
    LatestWins,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub aggregator: AggregatorConfig,
    pub policy: ThresholdPolicy,
    pub overrun: OverrunPolicy,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { aggregator: AggregatorConfig::default(), policy: ThresholdPolicy::default(), overrun: OverrunPolicy::ProcessAll }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Aggregator(#[from] AggregatorError),
    #[error("invalid threshold policy: {0}")]
    Policy(String),
    #[error("stream is {stream_w}x{stream_h} but the model expects {model_w}x{model_h}")]
    GeometryMismatch { stream_w: u16, stream_h: u16, model_w: u16, model_h: u16 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub gesture: GestureClass,
    pub probability: f32,
    /// Window end, µs of stream time.
    pub t_us: u64,
    /// Wall time from the window becoming available to emission.
    pub latency_us: u64,
    /// Wall time spent building the surface and running the model.
    pub compute_us: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PipelineStats {
    pub events_accepted: u64,
    pub events_dropped_late: u64,
    pub events_dropped_invalid: u64,
    pub windows_processed: u64,
    pub windows_skipped: u64,
    pub detections: u64,
}

/// Timing of one evaluated window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowRecord {
    pub t_us: u64,
    pub final_probs: [f32; NUM_CLASSES],
    pub compute_us: u64,
    pub latency_us: u64,
}

/// Argmax-then-threshold decision with per-class refractory suppression.
#[derive(Debug, Clone, PartialEq)]
pub struct Debouncer {
    policy: ThresholdPolicy,
    last_fire: [Option<u64>; NUM_CLASSES],
}

impl Debouncer {
    pub fn new(policy: ThresholdPolicy) -> Self {
        Self { policy, last_fire: [None; NUM_CLASSES] }
    }

    pub fn offer(&mut self, t_us: u64, probs: &[f32; NUM_CLASSES]) -> Option<(GestureClass, f32)> {
        let mut best = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p > probs[best] {
                best = i;
            }
        }
        let class = GestureClass::from_index(best)?;
        let threshold = self.policy.threshold(class)?;
        let p = probs[best];
        if p < threshold {
            return None;
        }
        if let Some(last) = self.last_fire[best] {
            if t_us.saturating_sub(last) < self.policy.refractory_us {
                return None;
            }
        }
        self.last_fire[best] = Some(t_us);
        Some((class, p))
    }
}

fn micros(since: Instant) -> u64 {
    since.elapsed().as_micros() as u64
}

/// Incremental pipeline over one event stream. Feed events in timestamp
/// order; windows `k * stride` (k >= 1) are evaluated once an event past
/// their end arrives or time is advanced explicitly.
pub struct StreamingPipeline {
    classifier: Arc<dyn SurfaceClassifier>,
    config: PipelineConfig,
    geometry: SensorGeometry,
    buffer: VecDeque<Event>,
    next_end: u64,
    last_t: Option<u64>,
    debouncer: Debouncer,
    stats: PipelineStats,
    records: Option<Vec<WindowRecord>>,
    last_window: Option<WindowRecord>,
    last_surface: Option<TimeSurface>,
}

impl StreamingPipeline {
    pub fn new(classifier: Arc<dyn SurfaceClassifier>, config: PipelineConfig) -> Result<Self, PipelineError> {
        config.aggregator.validate()?;
        config.policy.validate()?;
        let geometry = classifier.geometry();
        Ok(Self {
            classifier,
            next_end: config.aggregator.stride,
            debouncer: Debouncer::new(config.policy.clone()),
            config,
            geometry,
            buffer: VecDeque::new(),
            last_t: None,
            stats: PipelineStats::default(),
            records: None,
            last_window: None,
            last_surface: None,
        })
    }

    /// Keeps a [`WindowRecord`] for every evaluated window.
    pub fn record_windows(&mut self) {
        self.records.get_or_insert_with(Vec::new);
    }

    pub fn take_records(&mut self) -> Vec<WindowRecord> {
        self.records.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn stats(&self) -> PipelineStats {
        self.stats
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn geometry(&self) -> SensorGeometry {
        self.geometry
    }

    pub fn last_window(&self) -> Option<&WindowRecord> {
        self.last_window.as_ref()
    }

    /// Surface of the most recently evaluated window.
    pub fn last_surface(&self) -> Option<&TimeSurface> {
        self.last_surface.as_ref()
    }

    /// End of the next window to be evaluated.
    pub fn next_window_end(&self) -> u64 {
        self.next_end
    }

    /// Buffers events without evaluating windows. Events that are
    /// malformed, out of order, or inside an already evaluated window are
    /// dropped and counted.
    pub fn ingest(&mut self, events: &[Event]) {
        let processed_up_to = self.next_end - self.config.aggregator.stride;
        for &e in events {
            if !self.geometry.contains(e.x, e.y) || e.p > 1 {
                self.stats.events_dropped_invalid += 1;
                continue;
            }
            let late = self.last_t.is_some_and(|t| e.t < t) || (self.stats.windows_processed + self.stats.windows_skipped > 0 && e.t <= processed_up_to);
            if late {
                self.stats.events_dropped_late += 1;
                continue;
            }
            self.last_t = Some(e.t);
            self.buffer.push_back(e);
            self.stats.events_accepted += 1;
        }
    }

    /// Ingests `events` and evaluates every window that closed before the newest one.
    pub fn push(&mut self, events: &[Event]) -> Vec<DetectionEvent> {
        let available = Instant::now();
        self.ingest(events);
        match self.last_t {
            Some(t) if t > 0 => self.process_through(t - 1, available),
            _ => Vec::new(),
        }
    }

    /// Evaluates every window ending at or before `t_us`.
    pub fn advance_to(&mut self, t_us: u64) -> Vec<DetectionEvent> {
        self.process_through(t_us, Instant::now())
    }

    /// Flushes a finite stream: evaluates windows until the newest event has
    /// aged out of the window.
    pub fn finish(&mut self) -> Vec<DetectionEvent> {
        match self.last_t {
            Some(t) => self.advance_to(t + self.config.aggregator.window_length),
            None => Vec::new(),
        }
    }

    fn process_through(&mut self, horizon: u64, available: Instant) -> Vec<DetectionEvent> {
        let stride = self.config.aggregator.stride;
        if self.next_end > horizon {
            return Vec::new();
        }
        let due = (horizon - self.next_end) / stride + 1;
        if self.config.overrun == OverrunPolicy::LatestWins && due > 1 {
            self.stats.windows_skipped += due - 1;
            self.next_end += (due - 1) * stride;
        }
        let mut out = Vec::new();
        while self.next_end <= horizon {
            let t_l = self.next_end;
            if let Some(d) = self.evaluate(t_l, available) {
                out.push(d);
            }
            self.next_end += stride;
            self.evict();
        }
        out
    }

    fn evict(&mut self) {
        let keep_from = self.next_end.saturating_sub(self.config.aggregator.window_length);
        while self.buffer.front().is_some_and(|e| e.t < keep_from) {
            self.buffer.pop_front();
        }
    }

    fn evaluate(&mut self, t_l: u64, available: Instant) -> Option<DetectionEvent> {
        let start = Instant::now();
        let lo = t_l.saturating_sub(self.config.aggregator.window_length);
        let slice = self.buffer.make_contiguous();
        let a = slice.partition_point(|e| e.t < lo);
        let b = slice.partition_point(|e| e.t <= t_l);
        let surface = build_from_slice(self.geometry, &slice[a..b], t_l, self.config.aggregator.window_length);
        let probs = self.classifier.classify(&surface);
        let compute_us = micros(start);
        self.stats.windows_processed += 1;
        let decision = self.debouncer.offer(t_l, &probs);
        let latency_us = micros(available);
        let record = WindowRecord { t_us: t_l, final_probs: probs, compute_us, latency_us };
        if let Some(r) = &mut self.records {
            r.push(record);
        }
        self.last_window = Some(record);
        self.last_surface = Some(surface);
        let (gesture, probability) = decision?;
        self.stats.detections += 1;
        Some(DetectionEvent { gesture, probability, t_us: t_l, latency_us, compute_us })
    }
}

fn check_geometry(classifier: &dyn SurfaceClassifier, stream: &EventStream) -> Result<(), PipelineError> {
    let g = classifier.geometry();
    if stream.geometry != g {
        return Err(PipelineError::GeometryMismatch {
            stream_w: stream.geometry.width,
            stream_h: stream.geometry.height,
            model_w: g.width,
            model_h: g.height,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRun {
    pub detections: Vec<DetectionEvent>,
    pub stats: PipelineStats,
}

/// Replays a recorded stream event by event, then flushes it.
pub fn run_pipeline(
    classifier: Arc<dyn SurfaceClassifier>,
    stream: &EventStream,
    config: &PipelineConfig,
) -> Result<PipelineRun, PipelineError> {
    check_geometry(classifier.as_ref(), stream)?;
    let mut p = StreamingPipeline::new(classifier, config.clone())?;
    let mut detections = Vec::new();
    for e in &stream.events {
        detections.extend(p.push(std::slice::from_ref(e)));
    }
    detections.extend(p.finish());
    Ok(PipelineRun { detections, stats: p.stats() })
}

/// Reference path: builds every surface with [`slide`] over the same span as
/// [`run_pipeline`] and thresholds them in order. Timing fields are zero.
pub fn batch_detections(
    classifier: &dyn SurfaceClassifier,
    stream: &EventStream,
    config: &PipelineConfig,
) -> Result<Vec<DetectionEvent>, PipelineError> {
    check_geometry(classifier, stream)?;
    config.aggregator.validate()?;
    config.policy.validate()?;
    let Some(last) = stream.last_timestamp() else { return Ok(Vec::new()) };
    let mut debouncer = Debouncer::new(config.policy.clone());
    let surfaces = slide(stream, &config.aggregator, 0, last + config.aggregator.window_length);
    Ok(surfaces
        .iter()
        .filter_map(|s| {
            let (gesture, probability) = debouncer.offer(s.window_end, &classifier.classify(s))?;
            Some(DetectionEvent { gesture, probability, t_us: s.window_end, latency_us: 0, compute_us: 0 })
        })
        .collect())
}

/// Summary of a sample of durations, µs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Distribution {
    pub count: usize,
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
    pub max: f64,
}

impl Distribution {
    /// Nearest-rank percentiles.
    pub fn from_samples(samples: &[u64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut s = samples.to_vec();
        s.sort_unstable();
        let rank = |q: f64| s[((q * s.len() as f64).ceil() as usize).clamp(1, s.len()) - 1] as f64;
        Self {
            count: s.len(),
            mean: s.iter().sum::<u64>() as f64 / s.len() as f64,
            p50: rank(0.5),
            p95: rank(0.95),
            max: *s.last().expect("non-empty") as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub repetitions: usize,
    pub strides_per_repetition: usize,
    pub compute_us: Distribution,
    pub latency_us: Distribution,
    /// Stride length divided by mean per-stride compute time.
    pub real_time_factor: f64,
}

/// Replays `stream` `repetitions` times and reports per-stride timings.
pub fn bench_pipeline(
    classifier: Arc<dyn SurfaceClassifier>,
    stream: &EventStream,
    config: &PipelineConfig,
    repetitions: usize,
) -> Result<BenchReport, PipelineError> {
    check_geometry(classifier.as_ref(), stream)?;
    let config = PipelineConfig { overrun: OverrunPolicy::ProcessAll, ..config.clone() };
    let mut compute = Vec::new();
    let mut latency = Vec::new();
    let mut strides = 0;
    for _ in 0..repetitions {
        let mut p = StreamingPipeline::new(classifier.clone(), config.clone())?;
        p.record_windows();
        for e in &stream.events {
            p.push(std::slice::from_ref(e));
        }
        p.finish();
        let records = p.take_records();
        strides = records.len();
        compute.extend(records.iter().map(|r| r.compute_us));
        latency.extend(records.iter().map(|r| r.latency_us));
    }
    let compute_us = Distribution::from_samples(&compute);
    let real_time_factor = config.aggregator.stride as f64 / compute_us.mean.max(1.0);
    Ok(BenchReport {
        repetitions,
        strides_per_repetition: strides,
        compute_us,
        latency_us: Distribution::from_samples(&latency),
        real_time_factor,
    })
}

/// Messages accepted by a [`LiveHandle`].
#[derive(Debug, Clone, PartialEq)]
pub enum LiveInput {
    Events(Vec<Event>),
    /// Stream time has reached this point even without events.
    AdvanceTo(u64),
    Finish,
}

type Subscribers = Arc<Mutex<Vec<Sender<DetectionEvent>>>>;

/// A pipeline running on its own thread, fed through a bounded channel.
pub struct LiveHandle {
    input: Sender<LiveInput>,
    subscribers: Subscribers,
    worker: JoinHandle<PipelineStats>,
}

impl LiveHandle {
    /// Blocks while the input queue is full.
    pub fn send(&self, input: LiveInput) -> Result<(), SendError<LiveInput>> {
        self.input.send(input)
    }

    pub fn subscribe(&self) -> Receiver<DetectionEvent> {
        let (tx, rx) = unbounded();
        self.subscribers.lock().expect("subscriber lock").push(tx);
        rx
    }

    /// Flushes, stops the worker and returns its counters.
    pub fn finish(self) -> PipelineStats {
        let _ = self.input.send(LiveInput::Finish);
        drop(self.input);
        self.worker.join().expect("pipeline worker panicked")
    }
}

pub fn spawn_live(
    classifier: Arc<dyn SurfaceClassifier>,
    config: PipelineConfig,
    capacity: usize,
) -> Result<LiveHandle, PipelineError> {
    let mut pipeline = StreamingPipeline::new(classifier, config)?;
    let (tx, rx) = bounded::<LiveInput>(capacity.max(1));
    let subscribers: Subscribers = Arc::default();
    let subs = subscribers.clone();
    let worker = std::thread::spawn(move || {
        let publish = |ds: Vec<DetectionEvent>| {
            let mut list = subs.lock().expect("subscriber lock");
            for d in ds {
                list.retain(|s| s.send(d).is_ok());
            }
        };
        let latest_wins = pipeline.config().overrun == OverrunPolicy::LatestWins;
        while let Ok(first) = rx.recv() {
            // Under latest-wins, drain whatever queued up so only the newest due window runs.
            let mut batch = vec![first];
            while latest_wins && !matches!(batch.last(), Some(LiveInput::Finish)) {
                match rx.try_recv() {
                    Ok(m) => batch.push(m),
                    Err(TryRecvError::Empty | TryRecvError::Disconnected) => break,
                }
            }
            let mut horizon: Option<u64> = None;
            let mut finish = false;
            for m in batch {
                match m {
                    LiveInput::Events(ev) if latest_wins => pipeline.ingest(&ev),
                    LiveInput::Events(ev) => publish(pipeline.push(&ev)),
                    LiveInput::AdvanceTo(t) if latest_wins => horizon = Some(horizon.map_or(t, |h| h.max(t))),
                    LiveInput::AdvanceTo(t) => publish(pipeline.advance_to(t)),
                    LiveInput::Finish => finish = true,
                }
            }
            if latest_wins {
                publish(pipeline.push(&[]));
                if let Some(h) = horizon {
                    publish(pipeline.advance_to(h));
                }
            }
            if finish {
                publish(pipeline.finish());
                break;
            }
        }
        pipeline.stats()
    });
    Ok(LiveHandle { input: tx, subscribers, worker })
}

/// Window ends a pipeline started at 0 evaluates when flushing `stream`.
pub fn flushed_window_ends(stream: &EventStream, aggregator: &AggregatorConfig) -> Vec<u64> {
    match stream.last_timestamp() {
        Some(last) => window_ends(aggregator.stride, 0, last + aggregator.window_length).collect(),
        None => Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Scores the fraction of active pixels in each half of the frame.
    struct HalfCounter {
        geometry: SensorGeometry,
    }

    impl SurfaceClassifier for HalfCounter {
        fn geometry(&self) -> SensorGeometry {
            self.geometry
        }

        fn classify(&self, s: &TimeSurface) -> [f32; NUM_CLASSES] {
            let w = s.geometry.width as usize;
            let total: f32 = s.values.iter().sum();
            let left: f32 = s.values.iter().enumerate().filter(|(i, _)| i % w < w / 2).map(|(_, v)| v).sum();
            let mut p = [0.0; NUM_CLASSES];
            if total == 0.0 {
                p[0] = 1.0;
                return p;
            }
            let frac = left / total;
            p[GestureClass::SwipeLeft.index()] = frac;
            p[GestureClass::SwipeRight.index()] = 1.0 - frac;
            p
        }
    }

    fn counter() -> Arc<dyn SurfaceClassifier> {
        Arc::new(HalfCounter { geometry: SensorGeometry::new(8, 4) })
    }

    fn arb_stream() -> impl Strategy<Value = EventStream> {
        proptest::collection::vec((0u16..8, 0u16..4, 0u8..2, 0u64..40_000), 0..200).prop_map(|mut v| {
            v.sort_by_key(|e| e.3);
            EventStream::new(SensorGeometry::new(8, 4), v.into_iter().map(|(x, y, p, t)| Event::new(x, y, p, t)).collect())
        })
    }

    fn small_config(threshold: f32, refractory: u64) -> PipelineConfig {
        PipelineConfig {
            aggregator: AggregatorConfig { window_length: 5_000, stride: 1_000 },
            policy: ThresholdPolicy { refractory_us: refractory, ..ThresholdPolicy::uniform(threshold) },
            overrun: OverrunPolicy::ProcessAll,
        }
    }

    fn key(d: &[DetectionEvent]) -> Vec<(GestureClass, u64, u32)> {
        d.iter().map(|d| (d.gesture, d.t_us, d.probability.to_bits())).collect()
    }

    #[test]
    fn detections_stop_once_events_age_out() {
        let s = EventStream::new(SensorGeometry::new(8, 4), vec![Event::new(0, 0, 1, 0)]);
        let mut p = StreamingPipeline::new(counter(), small_config(0.7, 0)).unwrap();
        p.push(&s.events);
        let d = p.advance_to(100_000);
        // the single event only influences windows up to 5 ms
        assert!(d.iter().all(|d| d.t_us <= 5_000));
        assert_eq!(p.stats().windows_processed, 100);
    }

    #[test]
    fn never_emits_non_gestures() {
        let mut d = Debouncer::new(ThresholdPolicy::uniform(0.5));
        assert_eq!(d.offer(0, &[0.9, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0]), None);
        assert_eq!(d.offer(0, &[0.0, 0.9, 0.1, 0.0, 0.0, 0.0, 0.0]), None);
        assert_eq!(d.offer(0, &[0.0, 0.0, 0.9, 0.1, 0.0, 0.0, 0.0]), Some((GestureClass::SwipeLeft, 0.9)));
    }

    #[test]
    fn refractory_suppresses_repeats_of_the_same_class() {
        let mut d = Debouncer::new(ThresholdPolicy::uniform(0.5));
        let sl = [0.0, 0.0, 0.9, 0.1, 0.0, 0.0, 0.0];
        let sr = [0.0, 0.0, 0.1, 0.9, 0.0, 0.0, 0.0];
        assert!(d.offer(80_000, &sl).is_some());
        assert!(d.offer(160_000, &sl).is_none());
        assert!(d.offer(240_000, &sr).is_some());
        assert!(d.offer(560_000, &sl).is_none());
        assert!(d.offer(580_000, &sl).is_some());
    }

    #[test]
    fn policy_validation() {
        let mut p = ThresholdPolicy::default();
        assert!(p.validate().is_ok());
        p.thresholds.insert(GestureClass::HandUnknown, 0.5);
        assert!(p.validate().is_err());
        let mut p = ThresholdPolicy::default();
        p.thresholds.insert(GestureClass::Rest, 1.0);
        assert!(p.validate().is_err());
    }

    #[test]
    fn geometry_mismatch_is_rejected() {
        let s = EventStream::empty(SensorGeometry::new(9, 4));
        assert!(matches!(run_pipeline(counter(), &s, &small_config(0.7, 0)), Err(PipelineError::GeometryMismatch { .. })));
    }

    #[test]
    fn malformed_and_late_events_are_dropped() {
        let mut p = StreamingPipeline::new(counter(), small_config(0.7, 0)).unwrap();
        p.push(&[Event::new(1, 1, 1, 10), Event::new(8, 0, 1, 20), Event::new(0, 0, 2, 30), Event::new(1, 1, 1, 5)]);
        p.push(&[Event::new(1, 1, 1, 3_500)]);
        p.push(&[Event::new(1, 1, 1, 2_000)]);
        let s = p.stats();
        assert_eq!(s.events_accepted, 2);
        assert_eq!(s.events_dropped_invalid, 2);
        assert_eq!(s.events_dropped_late, 2);
        assert_eq!(s.windows_processed, 3);
    }

    #[test]
    fn latest_wins_skips_backlog() {
        let cfg = PipelineConfig { overrun: OverrunPolicy::LatestWins, ..small_config(0.7, 0) };
        let mut p = StreamingPipeline::new(counter(), cfg).unwrap();
        p.push(&[Event::new(0, 0, 1, 100)]);
        p.advance_to(10_000);
        assert_eq!(p.stats().windows_processed, 1);
        assert_eq!(p.stats().windows_skipped, 9);
        assert_eq!(p.next_window_end(), 11_000);
    }

    #[test]
    fn latency_covers_compute() {
        let s = EventStream::new(SensorGeometry::new(8, 4), (0..50).map(|i| Event::new(i % 8, 1, 1, i as u64 * 300)).collect());
        let run = run_pipeline(counter(), &s, &small_config(0.5, 0)).unwrap();
        assert!(!run.detections.is_empty());
        assert!(run.detections.iter().all(|d| d.latency_us >= d.compute_us));
    }

    #[test]
    fn live_runner_matches_offline() {
        let s = EventStream::new(SensorGeometry::new(8, 4), (0..60).map(|i| Event::new((i * 3 % 8) as u16, 2, 1, i as u64 * 250)).collect());
        let cfg = small_config(0.5, 2_000);
        let offline = run_pipeline(counter(), &s, &cfg).unwrap();
        let live = spawn_live(counter(), cfg, 4).unwrap();
        let rx = live.subscribe();
        for chunk in s.events.chunks(7) {
            live.send(LiveInput::Events(chunk.to_vec())).unwrap();
        }
        let stats = live.finish();
        let got: Vec<_> = rx.try_iter().collect();
        assert_eq!(key(&got), key(&offline.detections));
        assert_eq!(stats.windows_processed, offline.stats.windows_processed);
    }

    #[test]
    fn bench_accounting() {
        let s = EventStream::new(SensorGeometry::new(8, 4), (0..20).map(|i| Event::new(1, 1, 1, i * 500)).collect());
        let r = bench_pipeline(counter(), &s, &small_config(0.7, 0), 3).unwrap();
        assert_eq!(r.strides_per_repetition, flushed_window_ends(&s, &small_config(0.7, 0).aggregator).len());
        assert_eq!(r.compute_us.count, 3 * r.strides_per_repetition);
        assert!(r.real_time_factor > 1.0);
        assert!(r.compute_us.p50 <= r.compute_us.p95 && r.compute_us.p95 <= r.compute_us.max);
    }

    #[test]
    fn percentile_ranks() {
        let d = Distribution::from_samples(&(1..=100).collect::<Vec<u64>>());
        assert_eq!((d.p50, d.p95, d.max, d.mean), (50.0, 95.0, 100.0, 50.5));
    }

    proptest! {
        #[test]
        fn online_matches_batch(s in arb_stream(), th in 0.5f32..0.95, refractory in 0u64..6_000) {
            let cfg = small_config(th, refractory);
            let online = run_pipeline(counter(), &s, &cfg).unwrap();
            let batch = batch_detections(counter().as_ref(), &s, &cfg).unwrap();
            prop_assert_eq!(key(&online.detections), key(&batch));
        }

        #[test]
        fn chunking_does_not_matter(s in arb_stream(), chunk in 1usize..30) {
            let cfg = small_config(0.6, 1_500);
            let whole = run_pipeline(counter(), &s, &cfg).unwrap();
            let mut p = StreamingPipeline::new(counter(), cfg).unwrap();
            let mut got = Vec::new();
            for c in s.events.chunks(chunk) {
                got.extend(p.push(c));
            }
            got.extend(p.finish());
            prop_assert_eq!(key(&got), key(&whole.detections));
        }

        #[test]
        fn raising_thresholds_never_adds_detections(s in arb_stream(), lo in 0.5f32..0.8, bump in 0.0f32..0.19, refractory in 0u64..6_000) {
            let a = run_pipeline(counter(), &s, &small_config(lo, refractory)).unwrap();
            let b = run_pipeline(counter(), &s, &small_config(lo + bump, refractory)).unwrap();
            prop_assert!(b.detections.len() <= a.detections.len());
        }
    }
}
