//! Pointer trajectories rendered as a simulated hand and turned into events.

use evgest_core::events::{Event, EventStream, SensorGeometry};
use evgest_core::simulator::{add_ellipse, Background, EsimConfig, EventSimulator, SimError};
use serde::{Deserialize, Serialize};

/// One pointer sample from a client. Coordinates are normalized to the pad.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointerSample {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub pressed: bool,
    /// Client clock, µs.
    pub t: u64,
}

impl PointerSample {
    pub fn clamped(self) -> Self {
        let c = |v: f64| if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.5 };
        Self { x: c(self.x), y: c(self.y), ..self }
    }
}

/// Appearance of the pointer-driven hand. Lengths are in pixels of a 64x64
/// sensor and scale with the geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointerSceneConfig {
    pub palm_radii: [f64; 2],
    pub palm_contrast: f64,
    pub thumb_radius: f64,
    pub thumb_contrast: f64,
    /// Thumb offset below the palm center while released.
    pub thumb_rest_offset: f64,
    /// How far the thumb travels towards the fingertip when pressed.
    pub pinch_distance: f64,
    /// Seconds for the thumb to fully close or open.
    pub pinch_travel: f64,
    /// Mirror the pad horizontally, as a camera looking down at the hand would.
    pub mirror: bool,
    pub background_seed: u64,
    pub simulator_seed: u64,
}

impl Default for PointerSceneConfig {
    fn default() -> Self {
        Self {
            palm_radii: [10.5, 8.0],
            palm_contrast: 0.9,
            thumb_radius: 3.0,
            thumb_contrast: 0.85,
            thumb_rest_offset: 1.6,
            pinch_distance: 6.5,
            pinch_travel: 0.06,
            mirror: false,
            background_seed: 7,
            simulator_seed: 11,
        }
    }
}

/// Incremental pointer-to-event converter. Samples must arrive with
/// non-decreasing timestamps; the first sample only sets the initial state.
pub struct PointerEvents {
    geometry: SensorGeometry,
    scene: PointerSceneConfig,
    esim: EsimConfig,
    background: Vec<f64>,
    frame: Vec<f64>,
    sim: Option<EventSimulator>,
    last: Option<PointerSample>,
    closure: f64,
    rejected: u64,
}

impl PointerEvents {
    pub fn new(geometry: SensorGeometry, scene: PointerSceneConfig, esim: EsimConfig) -> Result<Self, SimError> {
        esim.validate()?;
        let mut background = vec![0.0; geometry.pixel_count()];
        Background::new(geometry, scene.background_seed).render_into([0.0, 0.0], &mut background);
        Ok(Self {
            geometry,
            scene,
            esim,
            frame: background.clone(),
            background,
            sim: None,
            last: None,
            closure: 0.0,
            rejected: 0,
        })
    }

    /// Samples dropped for going back in time.
    pub fn rejected(&self) -> u64 {
        self.rejected
    }

    fn render(&mut self, x: f64, y: f64) {
        let s = self.scene;
        let g = self.geometry;
        let scale = g.width.min(g.height) as f64 / 64.0;
        let x = if s.mirror { 1.0 - x } else { x };
        let palm = [x * g.width as f64, y * g.height as f64];
        let thumb = [palm[0], palm[1] + scale * (s.thumb_rest_offset - s.pinch_distance * self.closure)];
        self.frame.copy_from_slice(&self.background);
        add_ellipse(&mut self.frame, g, palm, [scale * s.palm_radii[0], scale * s.palm_radii[1]], s.palm_contrast);
        add_ellipse(&mut self.frame, g, thumb, [scale * s.thumb_radius; 2], s.thumb_contrast);
    }

    /// Renders the scene between the previous sample and each new one at the
    /// simulator's sample rate and returns the resulting events.
    pub fn push(&mut self, samples: &[PointerSample]) -> Vec<Event> {
        let mut out = Vec::new();
        let period_us = 1e6 / self.esim.sample_rate;
        for &raw in samples {
            let s = raw.clamped();
            let Some(prev) = self.last else {
                self.closure = if s.pressed { 1.0 } else { 0.0 };
                self.render(s.x, s.y);
                let sim = EventSimulator::new(self.geometry, self.esim, &self.frame, s.t as f64, self.scene.simulator_seed)
                    .expect("frame matches the geometry and the config was validated");
                self.sim = Some(sim);
                self.last = Some(s);
                continue;
            };
            if s.t < prev.t {
                self.rejected += 1;
                continue;
            }
            let span = (s.t - prev.t) as f64;
            let steps = (span / period_us).ceil() as u64;
            let target = if prev.pressed { 1.0 } else { 0.0 };
            let max_move = period_us * 1e-6 / self.scene.pinch_travel;
            let mut t_prev = prev.t as f64;
            for k in 1..=steps {
                let t = (prev.t as f64 + k as f64 * period_us).min(s.t as f64);
                let u = (t - prev.t as f64) / span;
                let dt_frac = (t - t_prev) / period_us;
                self.closure += (target - self.closure).clamp(-max_move * dt_frac, max_move * dt_frac);
                self.render(prev.x + (s.x - prev.x) * u, prev.y + (s.y - prev.y) * u);
                let sim = self.sim.as_mut().expect("initialized by the first sample");
                sim.step(&self.frame, t, &mut out);
                t_prev = t;
            }
            self.last = Some(s);
        }
        out
    }
}

/// Converts a whole pointer trajectory. Fewer than two samples give an empty stream.
pub fn pointer_to_events(
    samples: &[PointerSample],
    geometry: SensorGeometry,
    scene: &PointerSceneConfig,
    esim: &EsimConfig,
) -> Result<EventStream, SimError> {
    let mut conv = PointerEvents::new(geometry, *scene, *esim)?;
    let events = conv.push(samples);
    Ok(EventStream::new(geometry, events))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sweep(from: f64, to: f64, n: u64, pressed: bool) -> Vec<PointerSample> {
        (0..=n)
            .map(|i| PointerSample { x: from + (to - from) * i as f64 / n as f64, y: 0.5, pressed, t: i * 10_000 })
            .collect()
    }

    #[test]
    fn stationary_pointer_is_silent() {
        let g = SensorGeometry::new(64, 64);
        let s: Vec<_> = (0..30).map(|i| PointerSample { x: 0.4, y: 0.6, pressed: false, t: i * 10_000 }).collect();
        let out = pointer_to_events(&s, g, &PointerSceneConfig::default(), &EsimConfig::default()).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn single_sample_is_empty() {
        let g = SensorGeometry::new(32, 32);
        let s = [PointerSample { x: 0.1, y: 0.1, pressed: true, t: 5 }];
        assert!(pointer_to_events(&s, g, &PointerSceneConfig::default(), &EsimConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn sweep_polarity_follows_edges() {
        let g = SensorGeometry::new(64, 64);
        let s = sweep(0.3, 0.7, 30, false);
        let out = pointer_to_events(&s, g, &PointerSceneConfig::default(), &EsimConfig::default()).unwrap();
        assert!(out.len() > 100, "{}", out.len());
        // The disc is brighter than the background: the leading (right)
        // edge brightens, the trailing (left) edge darkens.
        let t_mid = 150_000;
        let center_x = 0.5 * 64.0;
        let near: Vec<_> = out.events.iter().filter(|e| e.t.abs_diff(t_mid) < 10_000 && (e.y as f64 - 32.0).abs() < 2.0).collect();
        let lead: Vec<_> = near.iter().filter(|e| e.x as f64 > center_x + 5.0).collect();
        let trail: Vec<_> = near.iter().filter(|e| (e.x as f64) < center_x - 5.0).collect();
        assert!(!lead.is_empty() && !trail.is_empty());
        assert!(lead.iter().all(|e| e.p == 1), "leading edge must be positive");
        assert!(trail.iter().all(|e| e.p == 0), "trailing edge must be negative");
    }

    #[test]
    fn mirroring_flips_the_edges() {
        let g = SensorGeometry::new(64, 64);
        let cfg = PointerSceneConfig { mirror: true, ..PointerSceneConfig::default() };
        let out = pointer_to_events(&sweep(0.3, 0.7, 30, false), g, &cfg, &EsimConfig::default()).unwrap();
        let near: Vec<_> = out.events.iter().filter(|e| e.t.abs_diff(150_000) < 10_000 && (e.y as f64 - 32.0).abs() < 2.0).collect();
        assert!(near.iter().filter(|e| e.x > 40).all(|e| e.p == 0));
    }

    #[test]
    fn conversion_is_deterministic_and_chunking_invariant() {
        let g = SensorGeometry::new(48, 48);
        let mut s = sweep(0.2, 0.8, 20, false);
        s.extend(sweep(0.8, 0.8, 10, true).into_iter().map(|p| PointerSample { t: p.t + 210_000, ..p }));
        let cfg = PointerSceneConfig::default();
        let esim = EsimConfig::default();
        let a = pointer_to_events(&s, g, &cfg, &esim).unwrap();
        assert_eq!(a, pointer_to_events(&s, g, &cfg, &esim).unwrap());
        let mut conv = PointerEvents::new(g, cfg, esim).unwrap();
        let mut chunked = Vec::new();
        for c in s.chunks(7) {
            chunked.extend(conv.push(c));
        }
        assert_eq!(a.events, chunked);
    }

    #[test]
    fn pressing_moves_the_thumb() {
        let g = SensorGeometry::new(64, 64);
        let s: Vec<_> = (0..20).map(|i| PointerSample { x: 0.5, y: 0.5, pressed: i >= 5, t: i * 10_000 }).collect();
        let out = pointer_to_events(&s, g, &PointerSceneConfig::default(), &EsimConfig::default()).unwrap();
        assert!(!out.is_empty());
        assert!(out.events.iter().all(|e| e.t > 40_000));
    }

    #[test]
    fn out_of_range_and_backwards_samples() {
        let g = SensorGeometry::new(32, 32);
        let mut conv = PointerEvents::new(g, PointerSceneConfig::default(), EsimConfig::default()).unwrap();
        let ev = conv.push(&[
            PointerSample { x: -3.0, y: 9.0, pressed: false, t: 100 },
            PointerSample { x: f64::NAN, y: 0.5, pressed: false, t: 20_000 },
            PointerSample { x: 0.5, y: 0.5, pressed: false, t: 10_000 },
        ]);
        assert_eq!(conv.rejected(), 1);
        assert!(ev.iter().all(|e| g.contains(e.x, e.y)));
    }
}
