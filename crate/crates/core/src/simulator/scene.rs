//! Procedural hand-proxy scenes.
//!
//! A scene is a smooth log-intensity field: a textured background (optionally
//! drifting, to mimic ego-motion) plus, for every class but `NoHand`, a bright
//! elliptical palm and a brighter thumb disc moved by the class kinematics.
//! Pixel `(x, y)` samples the field at its center `(x + 0.5, y + 0.5)`.

use super::{GestureClass, SimError};
use crate::events::SensorGeometry;
use crate::representation::BoundingBox;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

/// Logistic edge width of the hand masks, in pixels.
const EDGE_WIDTH: f64 = 0.6;
/// Masks are evaluated only this far (px) outside the shapes; beyond it they are < 5e-5.
const MASK_REACH: f64 = 6.0;
const BACKGROUND_WAVES: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandLayout {
    /// Palm center at t = duration/2 before any motion, in pixels.
    pub center: [f64; 2],
    pub palm_radii: [f64; 2],
    pub thumb_radius: f64,
    /// Log-intensity added by the palm and by the thumb.
    pub palm_contrast: f64,
    pub thumb_contrast: f64,
}

/// Per-class motion parameters. Directions are carried by the label (swipes)
/// or by explicit headings in radians.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Kinematics {
    /// Thumb speed across the palm for swipes, px/s.
    pub swipe_speed: f64,
    /// How far the thumb travels towards the fingertip on each pinch, px.
    pub pinch_distance: f64,
    pub pinch_cycles: u32,
    /// Time the pinch is held closed per cycle, s.
    pub pinch_hold: f64,
    /// Whole-hand tremor amplitude, px.
    pub jitter_amplitude: f64,
    pub jitter_frequency: f64,
    /// Straight-line hand translation, px/s.
    pub hand_speed: f64,
    pub hand_heading: f64,
    /// Amplitude of the curved random hand path, px.
    pub wander_amplitude: f64,
    /// Background drift (ego-motion), px/s.
    pub drift_speed: f64,
    pub drift_heading: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub label: GestureClass,
    /// Seconds.
    pub duration: f64,
    pub geometry: SensorGeometry,
    pub seed: u64,
    pub layout: HandLayout,
    pub kinematics: Kinematics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogFrame {
    pub geometry: SensorGeometry,
    /// Row-major log intensities.
    pub values: Vec<f64>,
    /// µs.
    pub timestamp: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandPose {
    pub palm: [f64; 2],
    pub thumb: [f64; 2],
}

/// Anything that can be sampled as a log-intensity image over time.
pub trait Scene {
    fn geometry(&self) -> SensorGeometry;
    /// Writes the log intensity at `t` seconds into `out` (row-major, one value per pixel).
    fn render_into(&self, t: f64, out: &mut [f64]);
}

impl ScenarioSpec {
    /// Draws randomized, class-appropriate kinematics. Lengths scale with the
    /// sensor so a 320x320 scene looks like a 64x64 one at higher resolution.
    pub fn sample(label: GestureClass, geometry: SensorGeometry, seed: u64, duration: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5CE7_A810_u64.rotate_left(17));
        let w = geometry.width as f64;
        let h = geometry.height as f64;
        let s = w.min(h) / 64.0;

        let layout = HandLayout {
            center: [w * rng.random_range(0.35..0.65), h * rng.random_range(0.35..0.65)],
            palm_radii: [s * rng.random_range(9.0..12.0), s * rng.random_range(7.0..9.0)],
            thumb_radius: s * rng.random_range(2.6..3.4),
            palm_contrast: rng.random_range(0.7..1.1),
            thumb_contrast: rng.random_range(0.7..1.0),
        };

        let mut k = Kinematics {
            jitter_amplitude: s * rng.random_range(0.0..0.25),
            jitter_frequency: rng.random_range(2.0..5.0),
            ..Kinematics::default()
        };
        match label {
            GestureClass::NoHand => {
                k.jitter_amplitude = 0.0;
                if rng.random_bool(0.7) {
                    k.drift_speed = s * rng.random_range(10.0..40.0);
                    k.drift_heading = rng.random_range(0.0..TAU);
                }
            }
            GestureClass::HandUnknown => {
                k.hand_speed = s * rng.random_range(15.0..45.0);
                k.hand_heading = rng.random_range(0.0..TAU);
                k.wander_amplitude = s * rng.random_range(2.0..5.0);
                if rng.random_bool(0.5) {
                    k.drift_speed = s * rng.random_range(5.0..25.0);
                    k.drift_heading = rng.random_range(0.0..TAU);
                }
            }
            GestureClass::SwipeLeft | GestureClass::SwipeRight => {
                k.swipe_speed = s * rng.random_range(28.0..42.0) * (0.4 / duration);
            }
            GestureClass::Rest => {
                k.jitter_amplitude = s * rng.random_range(0.4..1.0);
            }
            GestureClass::DoublePinch => {
                k.pinch_cycles = 2;
                k.pinch_distance = s * rng.random_range(5.0..8.0);
                k.pinch_hold = duration * rng.random_range(0.04..0.12);
            }
            GestureClass::MovingPinch => {
                k.pinch_cycles = 1;
                k.pinch_distance = s * rng.random_range(5.0..8.0);
                k.pinch_hold = duration * rng.random_range(0.1..0.3);
                k.hand_speed = s * rng.random_range(12.0..30.0);
                k.hand_heading = rng.random_range(0.0..TAU);
            }
        }

        Self { label, duration, geometry, seed, layout, kinematics: k }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |what: &str| Err(SimError::InvalidSpec(what.to_string()));
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return bad("duration must be > 0");
        }
        if !self.geometry.is_valid() {
            return bad("geometry must be at least 1x1");
        }
        let k = &self.kinematics;
        let magnitudes = [
            k.swipe_speed,
            k.pinch_distance,
            k.pinch_hold,
            k.jitter_amplitude,
            k.jitter_frequency,
            k.hand_speed,
            k.wander_amplitude,
            k.drift_speed,
        ];
        if magnitudes.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return bad("kinematic magnitudes must be finite and non-negative");
        }
        if !k.hand_heading.is_finite() || !k.drift_heading.is_finite() {
            return bad("headings must be finite");
        }
        let l = &self.layout;
        let layout = [l.center[0], l.center[1], l.palm_radii[0], l.palm_radii[1], l.thumb_radius];
        if layout.iter().any(|v| !v.is_finite())
            || l.palm_radii.iter().any(|r| *r <= 0.0)
            || l.thumb_radius <= 0.0
            || !l.palm_contrast.is_finite()
            || !l.thumb_contrast.is_finite()
        {
            return bad("hand layout must be finite with positive radii");
        }
        Ok(())
    }

    /// Hand pose at `t` seconds, or `None` for `NoHand`.
    pub fn hand_pose(&self, t: f64) -> Option<HandPose> {
        if !self.label.has_hand() {
            return None;
        }
        let k = &self.kinematics;
        let l = &self.layout;
        let ph = MotionPhases::from_seed(self.seed);
        let tc = t - self.duration / 2.0;

        let mut palm = l.center;
        if k.jitter_amplitude > 0.0 {
            let w = TAU * k.jitter_frequency;
            palm[0] += k.jitter_amplitude * (w * t + ph.jitter[0]).sin();
            palm[1] += k.jitter_amplitude * (1.31 * w * t + ph.jitter[1]).sin();
        }
        if k.hand_speed > 0.0 {
            palm[0] += k.hand_speed * tc * k.hand_heading.cos();
            palm[1] += k.hand_speed * tc * k.hand_heading.sin();
        }
        let wander = ph.wander(t);
        if k.wander_amplitude > 0.0 {
            palm[0] += k.wander_amplitude * wander[0];
            palm[1] += k.wander_amplitude * wander[1];
        }

        // thumb rests on the lower half of the palm (image y grows downwards)
        let mut offset = [0.0, 0.2 * l.palm_radii[1]];
        match self.label {
            GestureClass::SwipeLeft => offset[0] -= k.swipe_speed * tc,
            GestureClass::SwipeRight => offset[0] += k.swipe_speed * tc,
            GestureClass::HandUnknown => {
                offset[0] += 0.5 * k.wander_amplitude * wander[1];
                offset[1] += 0.5 * k.wander_amplitude * wander[0];
            }
            _ => {}
        }
        if k.pinch_cycles > 0 {
            offset[1] -= k.pinch_distance * pinch_closure(t, self.duration, k.pinch_cycles, k.pinch_hold);
        }
        Some(HandPose { palm, thumb: [palm[0] + offset[0], palm[1] + offset[1]] })
    }

    /// Normalized box enclosing the hand proxy over `[t0, t1]` (clamped to the
    /// scenario), with a one-pixel margin. `None` when there is no hand.
    pub fn hand_box(&self, t0: f64, t1: f64) -> Option<BoundingBox> {
        let t0 = t0.clamp(0.0, self.duration);
        let t1 = t1.clamp(t0, self.duration);
        let steps = (((t1 - t0) / 0.005).ceil() as usize).max(1);
        let l = &self.layout;
        let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for i in 0..=steps {
            let t = t0 + (t1 - t0) * i as f64 / steps as f64;
            let pose = self.hand_pose(t)?;
            x0 = x0.min(pose.palm[0] - l.palm_radii[0]).min(pose.thumb[0] - l.thumb_radius);
            x1 = x1.max(pose.palm[0] + l.palm_radii[0]).max(pose.thumb[0] + l.thumb_radius);
            y0 = y0.min(pose.palm[1] - l.palm_radii[1]).min(pose.thumb[1] - l.thumb_radius);
            y1 = y1.max(pose.palm[1] + l.palm_radii[1]).max(pose.thumb[1] + l.thumb_radius);
        }
        let w = self.geometry.width as f64;
        let h = self.geometry.height as f64;
        let x0 = ((x0 - 1.0) / w).clamp(0.0, 1.0);
        let x1 = ((x1 + 1.0) / w).clamp(0.0, 1.0);
        let y0 = ((y0 - 1.0) / h).clamp(0.0, 1.0);
        let y1 = ((y1 + 1.0) / h).clamp(0.0, 1.0);
        let min_extent = 1.0 / w.max(h);
        Some(BoundingBox {
            cx: ((x0 + x1) / 2.0) as f32,
            cy: ((y0 + y1) / 2.0) as f32,
            w: (x1 - x0).max(min_extent) as f32,
            h: (y1 - y0).max(min_extent) as f32,
        })
    }
}

/// Fraction of the pinch distance closed at time `t` (0 = open, 1 = touching).
fn pinch_closure(t: f64, duration: f64, cycles: u32, hold: f64) -> f64 {
    let period = duration / cycles as f64;
    let hold = hold.min(period);
    let travel = (period - hold) / 2.0;
    let tau = t.rem_euclid(period);
    let smooth = |u: f64| {
        let u = u.clamp(0.0, 1.0);
        u * u * (3.0 - 2.0 * u)
    };
    if travel <= 0.0 {
        1.0
    } else if tau < travel {
        smooth(tau / travel)
    } else if tau < travel + hold {
        1.0
    } else {
        smooth(1.0 - (tau - travel - hold) / travel)
    }
}

struct MotionPhases {
    jitter: [f64; 2],
    wander_phase: [f64; 4],
    wander_freq: [f64; 4],
}

impl MotionPhases {
    fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA11C_E5ED);
        let mut r = |lo: f64, hi: f64| rng.random_range(lo..hi);
        Self {
            jitter: [r(0.0, TAU), r(0.0, TAU)],
            wander_phase: [r(0.0, TAU), r(0.0, TAU), r(0.0, TAU), r(0.0, TAU)],
            wander_freq: [r(1.5, 3.0), r(3.0, 5.0), r(1.5, 3.0), r(3.0, 5.0)],
        }
    }

    /// Smooth pseudo-random path with components in roughly [-1, 1].
    fn wander(&self, t: f64) -> [f64; 2] {
        let f = &self.wander_freq;
        let p = &self.wander_phase;
        [
            0.7 * (TAU * f[0] * t + p[0]).sin() + 0.3 * (TAU * f[1] * t + p[1]).sin(),
            0.7 * (TAU * f[2] * t + p[2]).sin() + 0.3 * (TAU * f[3] * t + p[3]).sin(),
        ]
    }
}

/// Sum of planar waves with per-pixel sin/cos tables, so translating the
/// field costs two multiplies per wave per pixel.
#[derive(Debug, Clone)]
pub struct Background {
    waves: Vec<([f64; 2], Vec<f64>, Vec<f64>)>,
}

impl Background {
    pub fn new(geometry: SensorGeometry, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xB4C6_F00D);
        let w = geometry.width as usize;
        let h = geometry.height as usize;
        let scale = (geometry.width.min(geometry.height) as f64 / 64.0).max(1e-3);
        let waves = (0..BACKGROUND_WAVES)
            .map(|_| {
                let wavelength = scale * rng.random_range(9.0..24.0);
                let angle = rng.random_range(0.0..PI);
                let amp = rng.random_range(0.08..0.16);
                let phase = rng.random_range(0.0..TAU);
                let k = [TAU / wavelength * angle.cos(), TAU / wavelength * angle.sin()];
                let mut s = Vec::with_capacity(w * h);
                let mut c = Vec::with_capacity(w * h);
                for y in 0..h {
                    for x in 0..w {
                        let a = k[0] * (x as f64 + 0.5) + k[1] * (y as f64 + 0.5) + phase;
                        s.push(amp * a.sin());
                        c.push(amp * a.cos());
                    }
                }
                (k, s, c)
            })
            .collect();
        Self { waves }
    }

    /// Writes the field translated by `shift` pixels.
    pub fn render_into(&self, shift: [f64; 2], out: &mut [f64]) {
        out.fill(0.0);
        for (k, s, c) in &self.waves {
            let b = k[0] * shift[0] + k[1] * shift[1];
            let (sb, cb) = b.sin_cos();
            for ((o, s), c) in out.iter_mut().zip(s).zip(c) {
                *o += s * cb - c * sb;
            }
        }
    }
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Adds a smooth ellipse of log-intensity `contrast` to `out`.
pub fn add_ellipse(
    out: &mut [f64],
    geometry: SensorGeometry,
    center: [f64; 2],
    radii: [f64; 2],
    contrast: f64,
) {
    let w = geometry.width as i64;
    let h = geometry.height as i64;
    let x_lo = ((center[0] - radii[0] - MASK_REACH).floor() as i64).clamp(0, w);
    let x_hi = ((center[0] + radii[0] + MASK_REACH).ceil() as i64).clamp(0, w);
    let y_lo = ((center[1] - radii[1] - MASK_REACH).floor() as i64).clamp(0, h);
    let y_hi = ((center[1] + radii[1] + MASK_REACH).ceil() as i64).clamp(0, h);
    let r_min = radii[0].min(radii[1]);
    for y in y_lo..y_hi {
        let dy = (y as f64 + 0.5 - center[1]) / radii[1];
        let row = (y * w) as usize;
        for x in x_lo..x_hi {
            let dx = (x as f64 + 0.5 - center[0]) / radii[0];
            // approximate signed distance to the ellipse boundary, in pixels
            let sd = ((dx * dx + dy * dy).sqrt() - 1.0) * r_min;
            out[row + x as usize] += contrast * logistic(-sd / EDGE_WIDTH);
        }
    }
}

/// Renderer for a [`ScenarioSpec`], caching the background tables.
#[derive(Debug, Clone)]
pub struct GestureScene {
    spec: ScenarioSpec,
    background: Background,
}

impl GestureScene {
    pub fn new(spec: ScenarioSpec) -> Result<Self, SimError> {
        spec.validate()?;
        let background = Background::new(spec.geometry, spec.seed);
        Ok(Self { spec, background })
    }

    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }
}

impl Scene for GestureScene {
    fn geometry(&self) -> SensorGeometry {
        self.spec.geometry
    }

    fn render_into(&self, t: f64, out: &mut [f64]) {
        let k = &self.spec.kinematics;
        let shift = [
            k.drift_speed * t * k.drift_heading.cos(),
            k.drift_speed * t * k.drift_heading.sin(),
        ];
        self.background.render_into(shift, out);
        if let Some(pose) = self.spec.hand_pose(t) {
            let l = &self.spec.layout;
            let g = self.spec.geometry;
            add_ellipse(out, g, pose.palm, l.palm_radii, l.palm_contrast);
            add_ellipse(out, g, pose.thumb, [l.thumb_radius; 2], l.thumb_contrast);
        }
    }
}

pub fn render_scene(spec: &ScenarioSpec, t: f64) -> Result<LogFrame, SimError> {
    if !(0.0..=spec.duration).contains(&t) {
        return Err(SimError::TimeOutOfRange { t, duration: spec.duration });
    }
    let scene = GestureScene::new(spec.clone())?;
    let mut values = vec![0.0; spec.geometry.pixel_count()];
    scene.render_into(t, &mut values);
    Ok(LogFrame { geometry: spec.geometry, values, timestamp: (t * 1e6).round() as u64 })
}
