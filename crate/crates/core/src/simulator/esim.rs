//! Contrast-threshold event synthesis over a piecewise-linear signal.
//!
//! The scene is sampled at `sample_rate`; between two samples each pixel's log
//! intensity is linear in time. Every time it crosses `reference + C+` (or
//! `reference - C-`) an event is emitted at the interpolated crossing time and
//! the reference moves to the crossed level.

use super::scene::{GestureScene, Scene, ScenarioSpec};
use super::SimError;
use crate::events::{Event, EventStream, SensorGeometry};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EsimConfig {
    pub contrast_threshold_pos: f64,
    pub contrast_threshold_neg: f64,
    /// Hz.
    pub sample_rate: f64,
    /// µs between events at one pixel; 0 disables.
    pub refractory_period: u64,
    /// Background events per pixel per second.
    pub noise_rate: f64,
}

impl Default for EsimConfig {
    fn default() -> Self {
        Self {
            contrast_threshold_pos: 0.2,
            contrast_threshold_neg: 0.2,
            sample_rate: 1000.0,
            refractory_period: 0,
            noise_rate: 0.0,
        }
    }
}

impl EsimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |what: &str| Err(SimError::InvalidConfig(what.to_string()));
        if !(self.contrast_threshold_pos > 0.0 && self.contrast_threshold_pos.is_finite()) {
            return bad("contrast_threshold_pos must be > 0");
        }
        if !(self.contrast_threshold_neg > 0.0 && self.contrast_threshold_neg.is_finite()) {
            return bad("contrast_threshold_neg must be > 0");
        }
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return bad("sample_rate must be > 0");
        }
        if !(self.noise_rate >= 0.0 && self.noise_rate.is_finite()) {
            return bad("noise_rate must be >= 0");
        }
        Ok(())
    }
}

/// Per-pixel simulator state. Feed it successive frames with [`step`](Self::step).
#[derive(Debug, Clone)]
pub struct EventSimulator {
    geometry: SensorGeometry,
    config: EsimConfig,
    reference: Vec<f64>,
    previous: Vec<f64>,
    previous_time_us: f64,
    last_event_us: Vec<Option<f64>>,
    rng: ChaCha8Rng,
    pending: Vec<(f64, Event)>,
}

impl EventSimulator {
    /// Starts from `initial` at `t_us`: references are set to the initial intensities.
    pub fn new(
        geometry: SensorGeometry,
        config: EsimConfig,
        initial: &[f64],
        t_us: f64,
        seed: u64,
    ) -> Result<Self, SimError> {
        config.validate()?;
        if initial.len() != geometry.pixel_count() {
            return Err(SimError::InvalidConfig(format!(
                "frame has {} values for a {}x{} sensor",
                initial.len(),
                geometry.width,
                geometry.height
            )));
        }
        Ok(Self {
            geometry,
            config,
            reference: initial.to_vec(),
            previous: initial.to_vec(),
            previous_time_us: t_us,
            last_event_us: vec![None; initial.len()],
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x0E5_1F00D),
            pending: Vec::new(),
        })
    }

    pub fn time_us(&self) -> f64 {
        self.previous_time_us
    }

    /// Consumes the frame sampled at `t_us` and appends the events of the
    /// interval `(previous, t_us]` to `out`, sorted by time.
    pub fn step(&mut self, frame: &[f64], t_us: f64, out: &mut Vec<Event>) {
        debug_assert_eq!(frame.len(), self.previous.len());
        let t0 = self.previous_time_us;
        let dt = t_us - t0;
        let cp = self.config.contrast_threshold_pos;
        let cn = self.config.contrast_threshold_neg;
        let refractory = self.config.refractory_period as f64;
        let width = self.geometry.width as usize;
        self.pending.clear();

        if dt > 0.0 {
            for (i, (&b, &a)) in frame.iter().zip(&self.previous).enumerate() {
                if a == b {
                    continue;
                }
                let r = &mut self.reference[i];
                let slope = (b - a) / dt;
                loop {
                    let (level, p) = if b >= *r + cp {
                        (*r + cp, 1)
                    } else if b <= *r - cn {
                        (*r - cn, 0)
                    } else {
                        break;
                    };
                    *r = level;
                    let t = (t0 + (level - a) / slope).clamp(t0, t_us);
                    let last = &mut self.last_event_us[i];
                    if refractory > 0.0 && last.is_some_and(|l| t - l < refractory) {
                        continue;
                    }
                    *last = Some(t);
                    let e = Event::new((i % width) as u16, (i / width) as u16, p, 0);
                    self.pending.push((t, e));
                }
            }

            if self.config.noise_rate > 0.0 {
                let lambda = self.config.noise_rate * frame.len() as f64 * dt * 1e-6;
                if let Ok(poisson) = Poisson::new(lambda) {
                    let n = poisson.sample(&mut self.rng) as usize;
                    for _ in 0..n {
                        let i = self.rng.random_range(0..frame.len());
                        let t = t0 + self.rng.random::<f64>() * dt;
                        let p = self.rng.random_range(0..2u8);
                        self.pending.push((t, Event::new((i % width) as u16, (i / width) as u16, p, 0)));
                    }
                }
            }
        }

        self.pending.sort_by(|a, b| a.0.total_cmp(&b.0));
        out.extend(self.pending.iter().map(|(t, e)| Event { t: t.round() as u64, ..*e }));
        self.previous.copy_from_slice(frame);
        self.previous_time_us = t_us;
    }
}

/// Samples `scene` on `[t_start, t_end]` seconds and emits its events.
pub fn simulate<S: Scene + ?Sized>(
    scene: &S,
    config: &EsimConfig,
    t_start: f64,
    t_end: f64,
    seed: u64,
) -> Result<EventStream, SimError> {
    config.validate()?;
    let geometry = scene.geometry();
    let mut frame = vec![0.0; geometry.pixel_count()];
    scene.render_into(t_start, &mut frame);
    let mut sim = EventSimulator::new(geometry, *config, &frame, t_start * 1e6, seed)?;
    let period = 1.0 / config.sample_rate;
    let samples = ((t_end - t_start) / period).ceil().max(0.0) as u64;
    let mut events = Vec::new();
    for k in 1..=samples {
        let t = (t_start + k as f64 * period).min(t_end);
        scene.render_into(t, &mut frame);
        sim.step(&frame, t * 1e6, &mut events);
    }
    Ok(EventStream::new(geometry, events))
}

pub fn generate_events(spec: &ScenarioSpec, config: &EsimConfig) -> Result<EventStream, SimError> {
    let scene = GestureScene::new(spec.clone())?;
    simulate(&scene, config, 0.0, spec.duration, spec.seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::validate_stream;
    use crate::simulator::GestureClass;

    /// One pixel whose log intensity changes linearly by `delta` over `duration`.
    pub(crate) struct Ramp {
        pub delta: f64,
        pub duration: f64,
    }

    impl Scene for Ramp {
        fn geometry(&self) -> SensorGeometry {
            SensorGeometry::new(1, 1)
        }
        fn render_into(&self, t: f64, out: &mut [f64]) {
            out[0] = 0.5 + self.delta * t / self.duration;
        }
    }

    #[test]
    fn constant_scene_has_no_events() {
        let mut spec = ScenarioSpec::sample(GestureClass::NoHand, SensorGeometry::new(32, 32), 1, 0.3);
        spec.kinematics.drift_speed = 0.0;
        let s = generate_events(&spec, &EsimConfig::default()).unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn ramp_up_two_and_a_half_thresholds() {
        let cfg = EsimConfig::default();
        let ramp = Ramp { delta: 2.5 * cfg.contrast_threshold_pos, duration: 0.1 };
        let s = simulate(&ramp, &cfg, 0.0, 0.1, 0).unwrap();
        assert_eq!(s.len(), 2);
        for (k, e) in s.events.iter().enumerate() {
            assert_eq!(e.p, 1);
            let exact = (k + 1) as f64 / 2.5 * 0.1 * 1e6;
            assert!((e.t as f64 - exact).abs() <= 1e6 / cfg.sample_rate);
        }
    }

    #[test]
    fn ramp_down_three_point_two_thresholds() {
        let cfg = EsimConfig::default();
        let ramp = Ramp { delta: -3.2 * cfg.contrast_threshold_neg, duration: 0.2 };
        let s = simulate(&ramp, &cfg, 0.0, 0.2, 0).unwrap();
        assert_eq!(s.len(), 3);
        assert!(s.events.iter().all(|e| e.p == 0));
    }

    #[test]
    fn refractory_suppresses_bursts() {
        let cfg = EsimConfig { refractory_period: 1_000_000, ..EsimConfig::default() };
        let ramp = Ramp { delta: 5.0, duration: 0.1 };
        let s = simulate(&ramp, &cfg, 0.0, 0.1, 0).unwrap();
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn noise_events_are_valid_and_seeded() {
        let cfg = EsimConfig { noise_rate: 5.0, ..EsimConfig::default() };
        let mut spec = ScenarioSpec::sample(GestureClass::NoHand, SensorGeometry::new(32, 32), 3, 0.5);
        spec.kinematics.drift_speed = 0.0;
        let a = generate_events(&spec, &cfg).unwrap();
        assert!(!a.is_empty());
        assert!(validate_stream(&a).is_ok());
        assert_eq!(a, generate_events(&spec, &cfg).unwrap());
    }

    #[test]
    fn gesture_streams_are_valid_and_deterministic() {
        for c in GestureClass::ALL {
            let spec = ScenarioSpec::sample(c, SensorGeometry::new(64, 64), 11, 0.4);
            let s = generate_events(&spec, &EsimConfig::default()).unwrap();
            assert!(validate_stream(&s).is_ok(), "{c}");
            assert_eq!(s, generate_events(&spec, &EsimConfig::default()).unwrap());
            if c != GestureClass::NoHand {
                assert!(!s.is_empty(), "{c} produced no events");
            }
        }
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = EsimConfig { sample_rate: 0.0, ..EsimConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = EsimConfig { contrast_threshold_neg: -0.1, ..EsimConfig::default() };
        assert!(cfg.validate().is_err());
    }
}
