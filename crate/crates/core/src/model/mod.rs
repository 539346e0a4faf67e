//! Two-stage gesture network with hand-written backward passes, Adam
//! training and the `HCK1` checkpoint format.

mod checkpoint;
mod config;
mod gradcheck;
mod layers;
mod network;
mod optim;
mod params;
mod tensor;
mod train;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointError, HCK1_MAGIC, HCK1_VERSION,
};
pub use config::{flops_estimate, Architecture, ConfigError, ConvSpec, ModelConfig};
pub use gradcheck::{gradient_check, GradCheckConfig, GradCheckReport, GradMismatch};
pub use layers::{log_sigmoid, log_softmax, relu_backward_inplace, relu_inplace, sigmoid, softmax, Conv2d, Dense};
pub use network::{
    loss, ForwardCache, ForwardOptions, LossBreakdown, LossScales, ModelOutput, Network, Target, PROB_EPSILON,
};
pub use optim::{
    adam_step, lr_schedule, AdamState, CropSource, TrainConfig, TrainConfigError, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON,
};
pub use params::{count_params, ModelParams};
pub use tensor::{Real, ShapeError, Tensor};
pub use train::{
    accuracy, labeled_surfaces, load_split, load_split_with_transitions, supervision_window_ends, train,
    train_on_samples, transition_surfaces, EpochMetrics, LabeledSurface, TrainError, TrainOutcome, TRANSITION_COVERAGE,
};

use crate::representation::TimeSurface;
use std::path::Path;

/// Immutable inference bundle: architecture plus `f32` parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GestureModel {
    network: Network,
    params: ModelParams<f32>,
}

impl GestureModel {
    pub fn new(config: &ModelConfig, params: ModelParams<f32>) -> Result<Self, ConfigError> {
        let network = Network::new(config)?;
        params.check(network.architecture())?;
        Ok(Self { network, params })
    }

    /// Freshly initialized weights.
    pub fn random(config: &ModelConfig, seed: u64) -> Result<Self, ConfigError> {
        let network = Network::new(config)?;
        let params = ModelParams::init(network.architecture(), seed);
        Ok(Self { network, params })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let (params, config) = load_checkpoint(path)?;
        Ok(Self::new(&config, params)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        save_checkpoint(path, &self.params, self.config())
    }

    pub fn predict(&self, surface: &TimeSurface) -> Result<ModelOutput<f32>, ConfigError> {
        self.network.forward(&self.params, surface, &ForwardOptions::inference())
    }

    pub fn config(&self) -> &ModelConfig {
        self.network.config()
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn params(&self) -> &ModelParams<f32> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams<f32> {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }
}
