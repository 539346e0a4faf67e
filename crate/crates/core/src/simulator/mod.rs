//! Procedural gesture scenes, contrast-threshold event synthesis and dataset building.

mod dataset;
mod esim;
mod gesture;
mod scene;

pub use dataset::{
    assign_splits, build_dataset, default_specs, DatasetError, DatasetManifest, ManifestEntry, Split,
    MANIFEST_FILE,
};
pub use esim::{generate_events, simulate, EsimConfig, EventSimulator};
pub use gesture::{GestureClass, UnknownClass, NUM_CLASSES, NUM_GESTURE_CLASSES};
pub use scene::{
    render_scene, GestureScene, HandLayout, HandPose, Kinematics, LogFrame, ScenarioSpec, Scene,
};
pub use scene::{add_ellipse, Background};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
    #[error("invalid simulator config: {0}")]
    InvalidConfig(String),
    #[error("time {t} s outside scenario [0, {duration}]")]
    TimeOutOfRange { t: f64, duration: f64 },
}

/// Default scenario length, seconds. Gestures span the whole scenario.
pub const DEFAULT_DURATION: f64 = 0.4;
