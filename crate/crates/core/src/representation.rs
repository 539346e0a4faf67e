//! Polarity-separated exponential time surfaces and the sliding aggregator.
//!
//! A surface for the window ending at `t_L` with length `L` holds, per pixel
//! and polarity, `exp(-(t_L - t_i) / L)` for the newest event `t_i` in
//! `[t_L - L, t_L]`, and 0 where there was none.

use crate::events::{Event, EventStream, SensorGeometry};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CHANNELS: usize = 2;
pub const DEFAULT_STRIDE_US: u64 = 80_000;
pub const DEFAULT_WINDOW_US: u64 = 500_000;
pub const DEFAULT_CROP_SIZE: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSurface {
    pub geometry: SensorGeometry,
    /// Channel-major `[channel][y][x]`; channel 0 = negative, 1 = positive polarity.
    pub values: Vec<f32>,
    pub window_end: u64,
    pub window_length: u64,
}

impl TimeSurface {
    pub fn zeros(geometry: SensorGeometry, window_end: u64, window_length: u64) -> Self {
        Self {
            geometry,
            values: vec![0.0; CHANNELS * geometry.pixel_count()],
            window_end,
            window_length,
        }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, channel: usize) -> usize {
        let w = self.geometry.width as usize;
        let h = self.geometry.height as usize;
        (channel * h + y) * w + x
    }

    pub fn get(&self, x: usize, y: usize, channel: usize) -> f32 {
        self.values[self.index(x, y, channel)]
    }

    pub fn channel(&self, channel: usize) -> &[f32] {
        let n = self.geometry.pixel_count();
        &self.values[channel * n..(channel + 1) * n]
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    /// Binary graymap (P5) of one channel with values scaled by 255.
    /// Lossy; meant for eyeballing surfaces only.
    pub fn to_pgm(&self, channel: usize) -> Vec<u8> {
        let mut out =
            format!("P5\n{} {}\n255\n", self.geometry.width, self.geometry.height).into_bytes();
        out.extend(self.channel(channel).iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregatorConfig {
    /// Window length L, µs.
    pub window_length: u64,
    /// µs between emitted surfaces.
    pub stride: u64,
}

impl Default for AggregatorConfig {
    fn default() -> Self {
        Self { window_length: DEFAULT_WINDOW_US, stride: DEFAULT_STRIDE_US }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AggregatorError {
    #[error("window length must be > 0")]
    ZeroWindow,
    #[error("stride must be > 0")]
    ZeroStride,
    #[error("stride {stride} µs exceeds window length {window} µs")]
    StrideExceedsWindow { stride: u64, window: u64 },
}

impl AggregatorConfig {
    pub fn validate(&self) -> Result<(), AggregatorError> {
        if self.window_length == 0 {
            return Err(AggregatorError::ZeroWindow);
        }
        if self.stride == 0 {
            return Err(AggregatorError::ZeroStride);
        }
        if self.stride > self.window_length {
            return Err(AggregatorError::StrideExceedsWindow {
                stride: self.stride,
                window: self.window_length,
            });
        }
        Ok(())
    }
}

/// Hand box in normalized image coordinates (center and extent).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub cx: f32,
    pub cy: f32,
    pub w: f32,
    pub h: f32,
}

impl BoundingBox {
    pub const FULL_FRAME: BoundingBox = BoundingBox { cx: 0.5, cy: 0.5, w: 1.0, h: 1.0 };

    pub fn is_valid(&self) -> bool {
        (0.0..=1.0).contains(&self.cx)
            && (0.0..=1.0).contains(&self.cy)
            && self.w > 0.0
            && self.w <= 1.0
            && self.h > 0.0
            && self.h <= 1.0
    }

    pub fn to_array(&self) -> [f32; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    pub fn from_array(a: [f32; 4]) -> Self {
        Self { cx: a[0], cy: a[1], w: a[2], h: a[3] }
    }

    /// Pixel-space extent `(x0, y0, x1, y1)` clipped to the frame.
    pub fn to_pixels(&self, geometry: SensorGeometry) -> (f64, f64, f64, f64) {
        let w = geometry.width as f64;
        let h = geometry.height as f64;
        let (cx, cy, bw, bh) = (self.cx as f64, self.cy as f64, self.w as f64, self.h as f64);
        (
            ((cx - bw / 2.0) * w).clamp(0.0, w),
            ((cy - bh / 2.0) * h).clamp(0.0, h),
            ((cx + bw / 2.0) * w).clamp(0.0, w),
            ((cy + bh / 2.0) * h).clamp(0.0, h),
        )
    }
}

/// Writes the events of `events` that fall in the window into `surface`.
fn accumulate(surface: &mut TimeSurface, events: &[Event]) {
    let t_l = surface.window_end;
    let l = surface.window_length as f64;
    let lo = t_l.saturating_sub(surface.window_length);
    for e in events {
        if e.t < lo || e.t > t_l {
            continue;
        }
        let channel = usize::from(e.p > 0);
        let i = surface.index(e.x as usize, e.y as usize, channel);
        surface.values[i] = (-((t_l - e.t) as f64) / l).exp() as f32;
    }
}

pub fn build_time_surface(events: &EventStream, window_end: u64, window_length: u64) -> TimeSurface {
    let mut surface = TimeSurface::zeros(events.geometry, window_end, window_length);
    let range = events.range_inclusive(window_end.saturating_sub(window_length), window_end);
    accumulate(&mut surface, &events.events[range]);
    surface
}

/// Same as [`build_time_surface`] over a plain slice of time-sorted events.
pub fn build_from_slice(
    geometry: SensorGeometry,
    events: &[Event],
    window_end: u64,
    window_length: u64,
) -> TimeSurface {
    let mut surface = TimeSurface::zeros(geometry, window_end, window_length);
    accumulate(&mut surface, events);
    surface
}

/// Window ends `start + k * stride` (k >= 1) up to and including `end`.
pub fn window_ends(stride: u64, start: u64, end: u64) -> impl Iterator<Item = u64> {
    let stride = stride.max(1);
    (1..).map(move |k| start + k * stride).take_while(move |t| *t <= end)
}

pub fn slide(events: &EventStream, config: &AggregatorConfig, start: u64, end: u64) -> Vec<TimeSurface> {
    window_ends(config.stride, start, end)
        .map(|t_l| build_time_surface(events, t_l, config.window_length))
        .collect()
}

/// A square two-channel crop, channel-major `[channel][y][x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CropPatch {
    pub size: usize,
    pub values: Vec<f32>,
    /// The box had no pixel area inside the frame; the patch is all zero.
    pub degenerate: bool,
}

/// Nearest-neighbor resample of `box` (clipped to the frame) to `out_size` squared.
pub fn crop_resize(surface: &TimeSurface, bbox: &BoundingBox, out_size: usize) -> CropPatch {
    let mut values = vec![0.0; CHANNELS * out_size * out_size];
    let (x0, y0, x1, y1) = bbox.to_pixels(surface.geometry);
    let (px0, px1) = (x0.floor() as usize, x1.ceil() as usize);
    let (py0, py1) = (y0.floor() as usize, y1.ceil() as usize);
    if !(x1 > x0 && y1 > y0) || px1 <= px0 || py1 <= py0 || out_size == 0 {
        return CropPatch { size: out_size, values, degenerate: true };
    }
    let sx = (x1 - x0) / out_size as f64;
    let sy = (y1 - y0) / out_size as f64;
    let cols: Vec<usize> = (0..out_size)
        .map(|i| ((x0 + (i as f64 + 0.5) * sx).floor() as usize).clamp(px0, px1 - 1))
        .collect();
    let rows: Vec<usize> = (0..out_size)
        .map(|j| ((y0 + (j as f64 + 0.5) * sy).floor() as usize).clamp(py0, py1 - 1))
        .collect();
    for c in 0..CHANNELS {
        for (j, &src_y) in rows.iter().enumerate() {
            let dst = (c * out_size + j) * out_size;
            for (i, &src_x) in cols.iter().enumerate() {
                values[dst + i] = surface.get(src_x, src_y, c);
            }
        }
    }
    CropPatch { size: out_size, values, degenerate: false }
}
