use super::layers::{Conv2d, Dense};
use crate::events::SensorGeometry;
use crate::simulator::{NUM_CLASSES, NUM_GESTURE_CLASSES};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvSpec {
    pub const fn new(channels: usize, kernel: usize, stride: usize) -> Self {
        Self { channels, kernel, stride }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub geometry: SensorGeometry,
    /// Side of the square stage-2 input crop, pixels.
    pub crop_size: usize,
    pub stage1_convs: Vec<ConvSpec>,
    pub stage1_dense: Vec<usize>,
    pub stage2_convs: Vec<ConvSpec>,
    pub stage2_dense: Vec<usize>,
    /// Drop rate on the hidden dense layers.
    pub dropout: f32,
    pub gesture_classes: usize,
    pub total_classes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("invalid model config: {0}")]
    Invalid(String),
    #[error("surface is {actual_w}x{actual_h}, model expects {expected_w}x{expected_h}")]
    GeometryMismatch { expected_w: u16, expected_h: u16, actual_w: u16, actual_h: u16 },
    #[error("parameter {name} has shape {actual:?}, expected {expected:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, actual: Vec<usize> },
    #[error("missing parameter {0}")]
    MissingParameter(String),
    #[error("unexpected parameter {0}")]
    UnexpectedParameter(String),
}

impl ModelConfig {
    /// 64x64 input, 32x32 crops; about 88k parameters.
    pub fn desk() -> Self {
        Self {
            geometry: SensorGeometry::new(64, 64),
            crop_size: 32,
            stage1_convs: vec![ConvSpec::new(8, 3, 2), ConvSpec::new(16, 3, 2), ConvSpec::new(32, 3, 2), ConvSpec::new(32, 3, 2)],
            stage1_dense: vec![64],
            stage2_convs: vec![ConvSpec::new(8, 3, 2), ConvSpec::new(16, 3, 2), ConvSpec::new(32, 3, 2)],
            stage2_dense: vec![64],
            dropout: 0.2,
            gesture_classes: NUM_GESTURE_CLASSES,
            total_classes: NUM_CLASSES,
        }
    }

    /// Full 320x320 sensor with 64x64 crops, sized to land near the
    /// parameter budget of the published model. The topology itself is ours.
    pub fn paper() -> Self {
        Self {
            geometry: SensorGeometry::new(320, 320),
            crop_size: 64,
            stage1_convs: vec![
                ConvSpec::new(16, 3, 2),
                ConvSpec::new(32, 3, 2),
                ConvSpec::new(64, 3, 2),
                ConvSpec::new(64, 3, 2),
                ConvSpec::new(64, 3, 2),
            ],
            stage1_dense: vec![64],
            stage2_convs: vec![ConvSpec::new(16, 3, 2), ConvSpec::new(32, 3, 2), ConvSpec::new(64, 3, 2), ConvSpec::new(64, 3, 2)],
            stage2_dense: vec![64],
            dropout: 0.2,
            gesture_classes: NUM_GESTURE_CLASSES,
            total_classes: NUM_CLASSES,
        }
    }

    /// A few thousand parameters on a 12x12 input, for gradient checks.
    pub fn tiny() -> Self {
        Self {
            geometry: SensorGeometry::new(12, 12),
            crop_size: 8,
            stage1_convs: vec![ConvSpec::new(3, 3, 2), ConvSpec::new(4, 3, 2)],
            stage1_dense: vec![8],
            stage2_convs: vec![ConvSpec::new(3, 3, 2)],
            stage2_dense: vec![8],
            dropout: 0.2,
            gesture_classes: NUM_GESTURE_CLASSES,
            total_classes: NUM_CLASSES,
        }
    }

    /// Same topology with every conv and dense width multiplied by `factor`.
    pub fn widened(&self, factor: usize) -> Self {
        let mut c = self.clone();
        for spec in c.stage1_convs.iter_mut().chain(c.stage2_convs.iter_mut()) {
            spec.channels *= factor;
        }
        for d in c.stage1_dense.iter_mut().chain(c.stage2_dense.iter_mut()) {
            *d *= factor;
        }
        c
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if !self.geometry.is_valid() {
            return bad("geometry must be at least 1x1");
        }
        if self.crop_size == 0 {
            return bad("crop size must be positive");
        }
        if self.gesture_classes != NUM_GESTURE_CLASSES || self.total_classes != NUM_CLASSES {
            return bad("class counts are fixed at 6 gesture / 7 total");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        for c in self.stage1_convs.iter().chain(&self.stage2_convs) {
            if c.channels == 0 || c.kernel == 0 || c.stride == 0 || c.kernel % 2 == 0 {
                return bad("conv layers need positive channels/stride and an odd kernel");
            }
        }
        if self.stage1_dense.iter().chain(&self.stage2_dense).any(|&d| d == 0) {
            return bad("dense widths must be positive");
        }
        Ok(())
    }
}

/// Concrete layer list derived from a [`ModelConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub config: ModelConfig,
    pub stage1_convs: Vec<Conv2d>,
    pub stage1_dense: Vec<Dense>,
    pub bbox_head: Dense,
    pub hand_head: Dense,
    pub stage2_convs: Vec<Conv2d>,
    /// Width of the flattened stage-2 features before the hand probability is appended.
    pub stage2_flat: usize,
    pub stage2_dense: Vec<Dense>,
    pub gesture_head: Dense,
}

fn conv_stack(prefix: &str, specs: &[ConvSpec], mut ch: usize, mut h: usize, mut w: usize) -> (Vec<Conv2d>, usize) {
    let mut layers = Vec::with_capacity(specs.len());
    for (i, s) in specs.iter().enumerate() {
        let conv = Conv2d::new(format!("{prefix}.conv{i}"), ch, s.channels, s.kernel, s.stride, h, w);
        ch = conv.out_channels;
        h = conv.out_h;
        w = conv.out_w;
        layers.push(conv);
    }
    (layers, ch * h * w)
}

fn dense_stack(prefix: &str, widths: &[usize], mut inputs: usize) -> (Vec<Dense>, usize) {
    let mut layers = Vec::with_capacity(widths.len());
    for (i, &w) in widths.iter().enumerate() {
        layers.push(Dense::new(format!("{prefix}.dense{i}"), inputs, w));
        inputs = w;
    }
    (layers, inputs)
}

impl Architecture {
    pub fn new(config: &ModelConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let g = config.geometry;
        let (stage1_convs, flat1) = conv_stack("stage1", &config.stage1_convs, 2, g.height as usize, g.width as usize);
        let (stage1_dense, hidden1) = dense_stack("stage1", &config.stage1_dense, flat1);
        let (stage2_convs, flat2) = conv_stack("stage2", &config.stage2_convs, 2, config.crop_size, config.crop_size);
        let (stage2_dense, hidden2) = dense_stack("stage2", &config.stage2_dense, flat2 + 1);
        Ok(Self {
            config: config.clone(),
            stage1_convs,
            stage1_dense,
            bbox_head: Dense::new("stage1.bbox".into(), hidden1, 4),
            hand_head: Dense::new("stage1.hand".into(), hidden1, 1),
            stage2_convs,
            stage2_flat: flat2,
            stage2_dense,
            gesture_head: Dense::new("stage2.gesture".into(), hidden2, config.gesture_classes),
        })
    }

    pub fn convs(&self) -> impl Iterator<Item = &Conv2d> {
        self.stage1_convs.iter().chain(&self.stage2_convs)
    }

    pub fn denses(&self) -> impl Iterator<Item = &Dense> {
        self.stage1_dense
            .iter()
            .chain([&self.bbox_head, &self.hand_head])
            .chain(&self.stage2_dense)
            .chain([&self.gesture_head])
    }

    /// `(name, shape)` of every parameter tensor, in a fixed order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for c in self.convs() {
            out.push((format!("{}.weight", c.name), c.weight_shape().to_vec()));
            out.push((format!("{}.bias", c.name), vec![c.out_channels]));
        }
        for d in self.denses() {
            out.push((format!("{}.weight", d.name), vec![d.outputs, d.inputs]));
            out.push((format!("{}.bias", d.name), vec![d.outputs]));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.convs().map(Conv2d::param_count).sum::<usize>() + self.denses().map(Dense::param_count).sum::<usize>()
    }

    pub fn macs(&self) -> usize {
        self.convs().map(Conv2d::macs).sum::<usize>() + self.denses().map(Dense::macs).sum::<usize>()
    }
}

/// Floating-point operations of one forward pass, counted as 2 x MACs over
/// all conv and dense layers.
pub fn flops_estimate(config: &ModelConfig) -> Result<usize, ConfigError> {
    Ok(2 * Architecture::new(config)?.macs())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_parameter_arithmetic() {
        assert_eq!(Dense::new("d".into(), 10, 5).param_count(), 55);
        assert_eq!(Conv2d::new("c".into(), 2, 4, 3, 1, 8, 8).param_count(), 76);
    }

    /// Second, independent count: walk the spatial shapes by hand.
    fn shape_walker(c: &ModelConfig) -> usize {
        let mut total = 0;
        let mut walk = |convs: &[ConvSpec], mut side_h: usize, mut side_w: usize| {
            let mut ch = 2;
            for s in convs {
                total += s.channels * ch * s.kernel * s.kernel + s.channels;
                side_h = (side_h - 1) / s.stride + 1;
                side_w = (side_w - 1) / s.stride + 1;
                ch = s.channels;
            }
            ch * side_h * side_w
        };
        let f1 = walk(&c.stage1_convs, c.geometry.height as usize, c.geometry.width as usize);
        let f2 = walk(&c.stage2_convs, c.crop_size, c.crop_size);
        let mut dense = |mut inp: usize, widths: &[usize]| {
            for &w in widths {
                total += inp * w + w;
                inp = w;
            }
            inp
        };
        let h1 = dense(f1, &c.stage1_dense);
        let h2 = dense(f2 + 1, &c.stage2_dense);
        total + (h1 * 4 + 4) + (h1 + 1) + (h2 * 6 + 6)
    }

    #[test]
    fn counts_match_shape_walker() {
        for c in [ModelConfig::desk(), ModelConfig::paper(), ModelConfig::tiny()] {
            assert_eq!(Architecture::new(&c).unwrap().param_count(), shape_walker(&c));
        }
        assert_eq!(Architecture::new(&ModelConfig::desk()).unwrap().param_count(), 87_611);
        assert!(Architecture::new(&ModelConfig::tiny()).unwrap().param_count() <= 5_000);
    }

    #[test]
    fn flops_are_twice_macs() {
        let c = ModelConfig::tiny();
        let a = Architecture::new(&c).unwrap();
        assert_eq!(flops_estimate(&c).unwrap(), 2 * a.macs());
        assert!(flops_estimate(&c.widened(2)).unwrap() > flops_estimate(&c).unwrap());
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = ModelConfig::tiny();
        c.gesture_classes = 5;
        assert!(Architecture::new(&c).is_err());
        let mut c = ModelConfig::tiny();
        c.stage1_convs[0].kernel = 2;
        assert!(Architecture::new(&c).is_err());
        let mut c = ModelConfig::tiny();
        c.dropout = 1.0;
        assert!(Architecture::new(&c).is_err());
    }
}
