use super::params::ModelParams;
use super::tensor::Real;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CropSource {
    /// Stage 2 sees the crop under the stage-1 prediction.
    Predicted,
    /// Stage 2 sees the crop under the target box when there is one.
    Target,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Epochs at the initial rate before the linear decay starts.
    pub hold_epochs: usize,
    /// Rate at the last epoch as a fraction of the initial rate.
    pub final_fraction: f64,
    /// Weight of the box loss.
    pub lambda: f64,
    pub seed: u64,
    pub crop_source: CropSource,
    /// Extra windows per training scenario that catch the gesture partly
    /// begun or partly aged out, at a random stride phase.
    pub transition_windows: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 35,
            batch_size: 1024,
            learning_rate: 0.0005,
            hold_epochs: 10,
            final_fraction: 0.1,
            lambda: 1.0,
            seed: 0,
            crop_source: CropSource::Predicted,
            transition_windows: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid training config: {0}")]
pub struct TrainConfigError(pub String);

impl TrainConfig {
    /// Defaults with the batch size scaled for the 64x64 desk profile.
    pub fn desk() -> Self {
        Self { batch_size: 64, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), TrainConfigError> {
        let bad = |m: &str| Err(TrainConfigError(m.to_string()));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch size must be positive");
        }
        let positive = |v: f64| v > 0.0;
        if !positive(self.learning_rate) || !positive(self.final_fraction) || self.lambda.is_nan() || self.lambda < 0.0 {
            return bad("learning rate and final fraction must be positive, lambda non-negative");
        }
        if self.hold_epochs >= self.epochs {
            return bad("hold epochs must be less than epochs");
        }
        Ok(())
    }
}

/// Learning rate for `epoch`: constant up to `hold_epochs`, then linear down
/// to `learning_rate * final_fraction` at the last epoch.
pub fn lr_schedule(epoch: usize, config: &TrainConfig) -> f64 {
    let lr0 = config.learning_rate;
    let last = config.epochs.saturating_sub(1);
    if epoch <= config.hold_epochs || last <= config.hold_epochs {
        return lr0;
    }
    let frac = ((epoch.min(last) - config.hold_epochs) as f64) / ((last - config.hold_epochs) as f64);
    lr0 + (lr0 * config.final_fraction - lr0) * frac
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T = f32> {
    pub m: ModelParams<T>,
    pub v: ModelParams<T>,
    /// Updates applied so far.
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        Self { m: params.zeros_like(), v: params.zeros_like(), step: 0 }
    }
}

/// One bias-corrected Adam update with learning rate `lr`.
pub fn adam_step<T: Real>(params: &mut ModelParams<T>, grads: &ModelParams<T>, state: &mut AdamState<T>, lr: f64) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    let (b1, b2) = (T::of(ADAM_BETA1), T::of(ADAM_BETA2));
    let (one_b1, one_b2) = (T::of(1.0 - ADAM_BETA1), T::of(1.0 - ADAM_BETA2));
    let step_size = T::of(lr / c1);
    let (inv_c2_sqrt, eps) = (T::of(1.0 / c2.sqrt()), T::of(ADAM_EPSILON));
    let m_iter = state.m.iter_mut();
    let v_iter = state.v.iter_mut();
    for (((name, p), (_, m)), (_, v)) in params.iter_mut().zip(m_iter).zip(v_iter) {
        let g = grads.get(name).data();
        for (((pv, mv), vv), &gv) in p.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g) {
            *mv = b1 * *mv + one_b1 * gv;
            *vv = b2 * *vv + one_b2 * gv * gv;
            *pv -= step_size * *mv / ((*vv).sqrt() * inv_c2_sqrt + eps);
        }
    }
}
