use crate::pointer::{PointerEvents, PointerSample, PointerSceneConfig};
use crate::protocol::{ClockMode, ServerMessage, SessionReport, SessionStats};
use evgest_core::eval::{precision_recall, prompt_schedule, TrialConfig, TrialError, TrialRecord, TrialScorer};
use evgest_core::events::Event;
use evgest_core::pipeline::{DetectionEvent, PipelineConfig, PipelineError, StreamingPipeline, SurfaceClassifier};
use evgest_core::representation::TimeSurface;
use evgest_core::simulator::{EsimConfig, SimError};
use std::sync::Arc;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Trial(#[from] TrialError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("session is finished")]
    Finished,
    #[error("advance is only accepted on client-clocked sessions")]
    WallClock,
}

/// One interactive trial: a prompt schedule scored against a live pipeline.
///
/// Session time starts at 0 with the first prompt's gap. Every input returns
/// the messages it caused, in order.
pub struct Session {
    id: String,
    trial: TrialConfig,
    clock: ClockMode,
    pipeline: StreamingPipeline,
    scorer: TrialScorer,
    pointer: PointerEvents,
    /// Client time of the first pointer sample and the session time it maps to.
    pointer_epoch: Option<(u64, u64)>,
    now_us: u64,
    prompts_sent: usize,
    records_sent: usize,
    detections: Vec<DetectionEvent>,
    finished: bool,
    wall_origin: Option<Instant>,
}

impl Session {
    pub fn new(
        id: String,
        trial: TrialConfig,
        clock: ClockMode,
        classifier: Arc<dyn SurfaceClassifier>,
        pipeline: PipelineConfig,
        scene: PointerSceneConfig,
        esim: EsimConfig,
    ) -> Result<Self, SessionError> {
        trial.validate()?;
        let geometry = classifier.geometry();
        Ok(Self {
            id,
            scorer: TrialScorer::new(prompt_schedule(&trial)),
            trial,
            clock,
            pipeline: StreamingPipeline::new(classifier, pipeline)?,
            pointer: PointerEvents::new(geometry, scene, esim)?,
            pointer_epoch: None,
            now_us: 0,
            prompts_sent: 0,
            records_sent: 0,
            detections: Vec::new(),
            finished: false,
            wall_origin: None,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn clock(&self) -> ClockMode {
        self.clock
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn now_us(&self) -> u64 {
        self.now_us
    }

    /// Starts the wall clock; returns false if it was already running.
    pub fn start_wall_clock(&mut self) -> bool {
        if self.wall_origin.is_some() {
            return false;
        }
        self.wall_origin = Some(Instant::now());
        true
    }

    /// Session time by the wall clock, once started.
    pub fn wall_time_us(&self) -> Option<u64> {
        self.wall_origin.map(|o| o.elapsed().as_micros() as u64)
    }

    pub fn last_surface(&self) -> Option<&TimeSurface> {
        self.pipeline.last_surface()
    }

    /// Messages a newly attached client needs to catch up: the current prompt and stats.
    pub fn greeting(&self) -> Vec<ServerMessage> {
        let mut out = Vec::new();
        if let Some(p) = self.prompts_sent.checked_sub(1).map(|i| self.scorer.schedule()[i]) {
            out.push(ServerMessage::prompt(&p, self.total(), self.trial.gap_us));
        }
        out.push(ServerMessage::Stats(self.stats()));
        out
    }

    fn total(&self) -> usize {
        self.scorer.schedule().len()
    }

    fn ensure_open(&self) -> Result<(), SessionError> {
        if self.finished {
            Err(SessionError::Finished)
        } else {
            Ok(())
        }
    }

    /// Events already in session time.
    pub fn push_events(&mut self, events: &[Event]) -> Result<Vec<ServerMessage>, SessionError> {
        self.ensure_open()?;
        if let Some(t) = events.iter().map(|e| e.t).max() {
            self.now_us = self.now_us.max(t);
        }
        let detections = self.pipeline.push(events);
        Ok(self.dispatch(detections))
    }

    /// Pointer samples in client time. The first sample maps to the current
    /// session time (the wall clock when it runs).
    pub fn push_pointer(&mut self, samples: &[PointerSample]) -> Result<Vec<ServerMessage>, SessionError> {
        self.ensure_open()?;
        let Some(first) = samples.first() else { return Ok(Vec::new()) };
        let anchor = self.wall_time_us().unwrap_or(self.now_us).max(self.now_us);
        let (client0, session0) = *self.pointer_epoch.get_or_insert((first.t, anchor));
        let rebased: Vec<PointerSample> = samples
            .iter()
            .map(|s| PointerSample { t: (s.t.saturating_sub(client0)) + session0, ..*s })
            .collect();
        let events = self.pointer.push(&rebased);
        self.push_events(&events)
    }

    pub fn advance(&mut self, t_us: u64) -> Result<Vec<ServerMessage>, SessionError> {
        if self.clock != ClockMode::Client {
            return Err(SessionError::WallClock);
        }
        self.advance_to(t_us)
    }

    /// Moves session time to `t_us`, evaluating every window up to it.
    pub fn advance_to(&mut self, t_us: u64) -> Result<Vec<ServerMessage>, SessionError> {
        self.ensure_open()?;
        let total = self.trial.total_duration_us();
        self.now_us = self.now_us.max(t_us.min(total));
        let detections = self.pipeline.advance_to(self.now_us);
        let mut out = self.dispatch(detections);
        if self.now_us >= total {
            let tail = self.pipeline.finish();
            out.extend(self.dispatch(tail));
            out.push(self.close());
        }
        Ok(out)
    }

    /// Ends the session now; prompts whose window has not closed are left out.
    pub fn finish(&mut self) -> Result<Vec<ServerMessage>, SessionError> {
        self.ensure_open()?;
        let tail = self.pipeline.finish();
        let mut out = self.dispatch(tail);
        out.push(self.close());
        Ok(out)
    }

    fn close(&mut self) -> ServerMessage {
        self.finished = true;
        ServerMessage::Finished { report: Box::new(self.report()) }
    }

    fn dispatch(&mut self, detections: Vec<DetectionEvent>) -> Vec<ServerMessage> {
        let mut out = Vec::new();
        let mut detections = detections.into_iter().peekable();
        let schedule: Vec<_> = self.scorer.schedule().to_vec();
        loop {
            // Announce prompts and close records in time order with detections.
            let next_t = detections.peek().map(|d| d.t_us).unwrap_or(u64::MAX);
            let announce = schedule.get(self.prompts_sent).map(|p| p.window_start_us - self.trial.gap_us);
            if announce.is_some_and(|a| a <= self.now_us && a <= next_t) {
                out.push(ServerMessage::prompt(&schedule[self.prompts_sent], schedule.len(), self.trial.gap_us));
                self.prompts_sent += 1;
                continue;
            }
            let decided = self.decided_through().min(next_t);
            if schedule.get(self.records_sent).is_some_and(|p| p.window_end_us <= decided) {
                self.records_sent += 1;
                out.push(ServerMessage::Stats(self.stats()));
                continue;
            }
            match detections.next() {
                Some(d) => {
                    self.scorer.observe(&d);
                    self.detections.push(d);
                    out.push(ServerMessage::Detection(d));
                }
                None => break,
            }
        }
        out
    }

    /// Every detection with `t_L` below this time has been produced.
    fn decided_through(&self) -> u64 {
        self.pipeline.next_window_end()
    }

    fn closed_records(&self) -> Vec<TrialRecord> {
        self.scorer.records().into_iter().take(self.records_sent).collect()
    }

    pub fn stats(&self) -> SessionStats {
        let records = self.closed_records();
        let summary = precision_recall(&records, self.scorer.spurious());
        SessionStats::from_records(&records, &summary, self.total())
    }

    pub fn report(&self) -> SessionReport {
        let records = self.closed_records();
        let summary = precision_recall(&records, self.scorer.spurious());
        SessionReport {
            id: self.id.clone(),
            trial: self.trial.clone(),
            clock: self.clock,
            finished: self.finished,
            time_us: self.now_us,
            stats: SessionStats::from_records(&records, &summary, self.total()),
            records,
            summary,
            pipeline: self.pipeline.stats(),
            detections: self.detections.clone(),
        }
    }
}
