//! Event-camera microgesture recognition: event codec, simulator, time
//! surfaces, a two-stage network, streaming inference and evaluation.

pub mod eval;
pub mod events;
pub mod model;
pub mod pipeline;
pub mod representation;
pub mod seed;
pub mod simulator;
