//! JSON messages exchanged over the live websocket.
//!
//! Client to server: `pointer_batch`, `advance`, `finish` as text frames, and
//! HEV1-encoded event batches as binary frames. Server to client: `prompt`,
//! `detection`, `stats`, `finished` and `error`.

use crate::pointer::PointerSample;
use evgest_core::eval::{Outcome, Prompt, TrialConfig, TrialRecord, TrialSummary};
use evgest_core::pipeline::{DetectionEvent, PipelineStats};
use evgest_core::simulator::GestureClass;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    PointerBatch { samples: Vec<PointerSample> },
    /// Moves session time forward (client clock only).
    Advance { t_us: u64 },
    /// Ends the session early; only completed prompts are reported.
    Finish {},
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Prompt {
        index: usize,
        total: usize,
        gesture: GestureClass,
        /// When the prompt is announced (start of its gap).
        announce_us: u64,
        window_start_us: u64,
        window_end_us: u64,
    },
    Detection(DetectionEvent),
    Stats(SessionStats),
    Finished { report: Box<SessionReport> },
    Error { message: String },
}

impl ServerMessage {
    pub fn error(message: impl Into<String>) -> Self {
        ServerMessage::Error { message: message.into() }
    }

    pub fn prompt(p: &Prompt, total: usize, gap_us: u64) -> Self {
        ServerMessage::Prompt {
            index: p.index,
            total,
            gesture: p.gesture,
            announce_us: p.window_start_us - gap_us,
            window_start_us: p.window_start_us,
            window_end_us: p.window_end_us,
        }
    }

    /// Detections may be dropped for slow subscribers; nothing else is.
    pub fn is_lossy(&self) -> bool {
        matches!(self, ServerMessage::Detection(_))
    }
}

/// One row of the running stats table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GestureStats {
    pub gesture: GestureClass,
    pub prompts: u64,
    pub hits: u64,
    pub failures: u64,
    pub timeouts: u64,
    pub precision: Option<f64>,
    pub precision_se: Option<f64>,
    pub recall: Option<f64>,
    pub recall_se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStats {
    pub completed: usize,
    pub total: usize,
    pub last_record: Option<TrialRecord>,
    pub per_gesture: Vec<GestureStats>,
    /// Detections this subscriber missed because it fell behind.
    #[serde(default)]
    pub dropped_detections: u64,
}

impl SessionStats {
    pub fn from_records(records: &[TrialRecord], summary: &TrialSummary, total: usize) -> Self {
        let per_gesture = summary
            .per_gesture
            .iter()
            .map(|(&gesture, pr)| {
                let mine = records.iter().filter(|r| r.prompt.gesture == gesture);
                let (mut hits, mut failures, mut timeouts, mut prompts) = (0, 0, 0, 0);
                for r in mine {
                    prompts += 1;
                    match r.outcome {
                        Outcome::Hit { .. } => hits += 1,
                        Outcome::Failure { .. } => failures += 1,
                        Outcome::Timeout => timeouts += 1,
                    }
                }
                GestureStats {
                    gesture,
                    prompts,
                    hits,
                    failures,
                    timeouts,
                    precision: pr.precision.value,
                    precision_se: pr.precision.std_error,
                    recall: pr.recall.value,
                    recall_se: pr.recall.std_error,
                }
            })
            .collect();
        Self { completed: records.len(), total, last_record: records.last().copied(), per_gesture, dropped_detections: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    /// Session time follows the server's wall clock from the first connection.
    #[default]
    Wall,
    /// Session time only moves with client events and `advance` messages.
    Client,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub id: String,
    pub trial: TrialConfig,
    pub clock: ClockMode,
    pub finished: bool,
    /// Session time reached, µs.
    pub time_us: u64,
    pub records: Vec<TrialRecord>,
    pub summary: TrialSummary,
    pub stats: SessionStats,
    pub pipeline: PipelineStats,
    pub detections: Vec<DetectionEvent>,
}
