//! Accuracy and confusion matrices over dataset splits, precision/recall,
//! and an automated prompt-and-respond trial protocol.

mod metrics;
mod trial;

pub use metrics::{evaluate_samples, evaluate_split, ConfusionMatrix, PrecisionRecall, Rate, SplitEvaluation};
pub use trial::{
    precision_recall, prompt_schedule, run_trial_protocol, Outcome, Performer, Prompt, SimulatedPerformer, TrialConfig,
    TrialError, TrialRecord, TrialReport, TrialScorer, TrialSummary,
};
