use super::metrics::{PrecisionRecall, Rate};
use crate::events::{Event, EventStream, SensorGeometry};
use crate::pipeline::{DetectionEvent, PipelineConfig, PipelineError, PipelineStats, StreamingPipeline, SurfaceClassifier};
use crate::seed;
use crate::simulator::{generate_events, EsimConfig, GestureClass, ScenarioSpec, SimError, DEFAULT_DURATION};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrialConfig {
    pub gestures: Vec<GestureClass>,
    pub repetitions: usize,
    /// Silence before each prompt, µs.
    pub gap_us: u64,
    /// Time allowed to perform the prompted gesture, µs.
    pub window_us: u64,
    /// Where the performer starts inside the response window, µs.
    pub response_offset_us: u64,
    pub seed: u64,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            gestures: vec![GestureClass::DoublePinch, GestureClass::SwipeLeft, GestureClass::SwipeRight],
            repetitions: 10,
            gap_us: 1_500_000,
            window_us: 2_000_000,
            response_offset_us: 250_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrialError {
    #[error("invalid trial config: {0}")]
    Config(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("performer stream for {0} does not fit the response window")]
    PerformerOverrun(GestureClass),
}

impl TrialConfig {
    pub fn validate(&self) -> Result<(), TrialError> {
        let bad = |m: &str| Err(TrialError::Config(m.to_string()));
        if self.gestures.is_empty() || self.repetitions == 0 {
            return bad("need at least one gesture and one repetition");
        }
        if self.gap_us == 0 || self.window_us == 0 {
            return bad("gap and window must be positive");
        }
        if self.response_offset_us >= self.window_us {
            return bad("response offset must fall inside the window");
        }
        if let Some(c) = self.gestures.iter().find(|c| !c.is_emittable()) {
            return Err(TrialError::Config(format!("{c} cannot be prompted")));
        }
        Ok(())
    }

    pub fn total_duration_us(&self) -> u64 {
        (self.gestures.len() * self.repetitions) as u64 * (self.gap_us + self.window_us)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub index: usize,
    pub gesture: GestureClass,
    pub window_start_us: u64,
    /// Exclusive.
    pub window_end_us: u64,
}

/// Seeded shuffle of `repetitions` copies of each gesture, laid out as
/// gap, window, gap, window, ...
pub fn prompt_schedule(config: &TrialConfig) -> Vec<Prompt> {
    let mut order: Vec<GestureClass> =
        config.gestures.iter().flat_map(|&g| std::iter::repeat_n(g, config.repetitions)).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
    order
        .into_iter()
        .enumerate()
        .map(|(i, gesture)| {
            let start = i as u64 * (config.gap_us + config.window_us) + config.gap_us;
            Prompt { index: i, gesture, window_start_us: start, window_end_us: start + config.window_us }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    Hit { latency_us: u64 },
    /// A different gesture was detected first.
    Failure { observed: GestureClass },
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub prompt: Prompt,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub per_gesture: BTreeMap<GestureClass, PrecisionRecall>,
    /// Detections outside every response window, per class.
    pub spurious: BTreeMap<GestureClass, u64>,
}

/// Per-gesture recall (hits over prompts) and precision (hits over hits
/// plus first detections of that gesture under another prompt plus
/// detections of it in gaps).
pub fn precision_recall(records: &[TrialRecord], spurious: &BTreeMap<GestureClass, u64>) -> TrialSummary {
    let mut prompts: BTreeMap<GestureClass, u64> = BTreeMap::new();
    let mut hits: BTreeMap<GestureClass, u64> = BTreeMap::new();
    let mut wrong: BTreeMap<GestureClass, u64> = BTreeMap::new();
    for r in records {
        *prompts.entry(r.prompt.gesture).or_default() += 1;
        match r.outcome {
            Outcome::Hit { .. } => *hits.entry(r.prompt.gesture).or_default() += 1,
            Outcome::Failure { observed } => *wrong.entry(observed).or_default() += 1,
            Outcome::Timeout => {}
        }
    }
    let classes: std::collections::BTreeSet<GestureClass> =
        prompts.keys().chain(wrong.keys()).chain(spurious.keys()).copied().collect();
    let per_gesture = classes
        .into_iter()
        .map(|c| {
            let h = hits.get(&c).copied().unwrap_or(0);
            let fp = wrong.get(&c).copied().unwrap_or(0) + spurious.get(&c).copied().unwrap_or(0);
            let n = prompts.get(&c).copied().unwrap_or(0);
            (c, PrecisionRecall { precision: Rate::new(h, h + fp), recall: Rate::new(h, n) })
        })
        .collect();
    TrialSummary { per_gesture, spurious: spurious.clone() }
}

/// Scores detections against a prompt schedule as they arrive.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialScorer {
    schedule: Vec<Prompt>,
    first: Vec<Option<DetectionEvent>>,
    spurious: BTreeMap<GestureClass, u64>,
}

impl TrialScorer {
    pub fn new(schedule: Vec<Prompt>) -> Self {
        let first = vec![None; schedule.len()];
        Self { schedule, first, spurious: BTreeMap::new() }
    }

    pub fn schedule(&self) -> &[Prompt] {
        &self.schedule
    }

    /// Prompt whose response window contains `t_us`.
    pub fn prompt_at(&self, t_us: u64) -> Option<&Prompt> {
        let i = self.schedule.partition_point(|p| p.window_end_us <= t_us);
        self.schedule.get(i).filter(|p| p.window_start_us <= t_us)
    }

    pub fn observe(&mut self, d: &DetectionEvent) {
        match self.prompt_at(d.t_us).map(|p| p.index) {
            Some(i) => {
                if self.first[i].is_none() {
                    self.first[i] = Some(*d);
                }
            }
            None => *self.spurious.entry(d.gesture).or_default() += 1,
        }
    }

    fn record(&self, i: usize) -> TrialRecord {
        let prompt = self.schedule[i];
        let outcome = match self.first[i] {
            None => Outcome::Timeout,
            Some(d) if d.gesture == prompt.gesture => Outcome::Hit { latency_us: d.t_us - prompt.window_start_us },
            Some(d) => Outcome::Failure { observed: d.gesture },
        };
        TrialRecord { prompt, outcome }
    }

    /// Records of prompts whose windows closed by `t_us`.
    pub fn closed_records(&self, t_us: u64) -> Vec<TrialRecord> {
        (0..self.schedule.len()).filter(|&i| self.schedule[i].window_end_us <= t_us).map(|i| self.record(i)).collect()
    }

    pub fn records(&self) -> Vec<TrialRecord> {
        (0..self.schedule.len()).map(|i| self.record(i)).collect()
    }

    pub fn spurious(&self) -> &BTreeMap<GestureClass, u64> {
        &self.spurious
    }

    pub fn summary(&self) -> TrialSummary {
        precision_recall(&self.records(), &self.spurious)
    }
}

/// Produces the event stream a performer emits for one prompt, starting at time 0.
pub trait Performer {
    fn perform(&mut self, prompt: &Prompt) -> Result<EventStream, TrialError>;
}

impl<F: FnMut(&Prompt) -> Result<EventStream, TrialError>> Performer for F {
    fn perform(&mut self, prompt: &Prompt) -> Result<EventStream, TrialError> {
        self(prompt)
    }
}

/// Simulates a fresh randomized scenario of the prompted class for every prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPerformer {
    pub geometry: SensorGeometry,
    pub esim: EsimConfig,
    pub duration: f64,
    pub seed: u64,
}

impl SimulatedPerformer {
    pub fn new(geometry: SensorGeometry, seed: u64) -> Self {
        Self { geometry, esim: EsimConfig::default(), duration: DEFAULT_DURATION, seed }
    }
}

impl Performer for SimulatedPerformer {
    fn perform(&mut self, prompt: &Prompt) -> Result<EventStream, TrialError> {
        let seed = seed::derive(self.seed, &[prompt.index as u64, prompt.gesture.index() as u64]);
        let spec = ScenarioSpec::sample(prompt.gesture, self.geometry, seed, self.duration);
        Ok(generate_events(&spec, &self.esim)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub config: TrialConfig,
    pub records: Vec<TrialRecord>,
    pub summary: TrialSummary,
    pub detections: Vec<DetectionEvent>,
    pub pipeline: PipelineStats,
}

/// Splices performer streams into one timeline, streams it through the
/// pipeline to the end of the session and scores every prompt.
pub fn run_trial_protocol(
    classifier: Arc<dyn SurfaceClassifier>,
    pipeline: &PipelineConfig,
    performer: &mut dyn Performer,
    config: &TrialConfig,
) -> Result<TrialReport, TrialError> {
    config.validate()?;
    let schedule = prompt_schedule(config);
    let mut events: Vec<Event> = Vec::new();
    for p in &schedule {
        let s = performer.perform(p)?;
        let offset = p.window_start_us + config.response_offset_us;
        if s.last_timestamp().is_some_and(|t| offset + t >= p.window_end_us) {
            return Err(TrialError::PerformerOverrun(p.gesture));
        }
        events.extend(s.events.iter().map(|e| Event { t: e.t + offset, ..*e }));
    }
    let mut stream = StreamingPipeline::new(classifier, pipeline.clone())?;
    let mut detections = stream.push(&events);
    detections.extend(stream.advance_to(config.total_duration_us()));
    detections.extend(stream.finish());
    let mut scorer = TrialScorer::new(schedule);
    for d in &detections {
        scorer.observe(d);
    }
    Ok(TrialReport {
        config: config.clone(),
        records: scorer.records(),
        summary: scorer.summary(),
        detections,
        pipeline: stream.stats(),
    })
}
