use super::config::{Architecture, ConfigError, ModelConfig};
use super::layers::{log_sigmoid, relu_backward_inplace, relu_inplace, sigmoid, softmax, Conv2d, Dense};
use super::params::ModelParams;
use super::tensor::Real;
use crate::representation::{crop_resize, BoundingBox, TimeSurface};
use crate::simulator::{GestureClass, NUM_CLASSES, NUM_GESTURE_CLASSES};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Lower bound applied to the target probability before taking its log.
pub const PROB_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardOptions {
    /// Enables dropout.
    pub training: bool,
    pub dropout_seed: u64,
    /// Crop with this box instead of the predicted one.
    pub crop: Option<BoundingBox>,
    /// Feed this hand probability to stage 2 instead of the predicted one.
    pub side_p_hand: Option<f64>,
}

impl ForwardOptions {
    pub fn inference() -> Self {
        Self { training: false, dropout_seed: 0, crop: None, side_p_hand: None }
    }

    pub fn training(dropout_seed: u64) -> Self {
        Self { training: true, dropout_seed, crop: None, side_p_hand: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelOutput<T = f32> {
    /// Box `[cx, cy, w, h]`, each in (0, 1).
    pub bbox: [T; 4],
    pub p_hand: T,
    pub gesture_probs: [T; NUM_GESTURE_CLASSES],
    /// Indexed by [`GestureClass::index`].
    pub final_probs: [T; NUM_CLASSES],
}

impl<T: Real> ModelOutput<T> {
    /// Builds the output from the hand probability and the stage-2 distribution.
    pub fn combine(bbox: [T; 4], p_hand: T, gesture_probs: [T; NUM_GESTURE_CLASSES]) -> Self {
        let mut final_probs = [T::zero(); NUM_CLASSES];
        final_probs[0] = T::one() - p_hand;
        for (f, &g) in final_probs[1..].iter_mut().zip(&gesture_probs) {
            *f = p_hand * g;
        }
        Self { bbox, p_hand, gesture_probs, final_probs }
    }

    pub fn bounding_box(&self) -> BoundingBox {
        let b = self.bbox.map(|v| v.f64() as f32);
        BoundingBox::from_array(b)
    }

    /// Argmax of `final_probs`; ties go to the lower index.
    pub fn predicted_class(&self) -> GestureClass {
        let mut best = 0;
        for (i, &p) in self.final_probs.iter().enumerate() {
            if p > self.final_probs[best] {
                best = i;
            }
        }
        GestureClass::from_index(best).expect("index in range")
    }

    pub fn probability(&self, class: GestureClass) -> T {
        self.final_probs[class.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target {
    pub label: GestureClass,
    /// Present iff the label has a hand.
    pub bbox: Option<BoundingBox>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub gesture: f64,
    pub bbox: f64,
}

fn bbox_active(target: &Target) -> Option<BoundingBox> {
    target.bbox.filter(|_| target.label.has_hand())
}

pub fn loss<T: Real>(output: &ModelOutput<T>, target: &Target, lambda: f64) -> LossBreakdown {
    let prob = output.final_probs[target.label.index()].f64();
    let gesture = -prob.max(PROB_EPSILON).ln();
    let bbox = match bbox_active(target) {
        Some(b) => {
            output.bbox.iter().zip(b.to_array()).map(|(p, t)| (p.f64() - t as f64).powi(2)).sum::<f64>() / 4.0
        }
        None => 0.0,
    };
    LossBreakdown { total: gesture + lambda * bbox, gesture, bbox }
}

/// Per-sample loss weights for backward: the gesture term is scaled by
/// `gesture` and the box term by `bbox` (which already includes λ).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossScales {
    pub gesture: f64,
    pub bbox: f64,
}

impl LossScales {
    pub fn single(lambda: f64) -> Self {
        Self { gesture: 1.0, bbox: lambda }
    }
}

#[derive(Debug, Clone)]
struct DenseCache<T> {
    input: Vec<T>,
    activated: Vec<T>,
    mask: Option<Vec<T>>,
}

#[derive(Debug, Clone)]
struct TrunkCache<T> {
    convs: Vec<(Vec<T>, Vec<T>)>,
    dense: Vec<DenseCache<T>>,
    /// Input to the heads.
    hidden: Vec<T>,
}

/// Activations kept by [`Network::forward_cached`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    stage1: TrunkCache<T>,
    hand_logit: T,
    stage2: TrunkCache<T>,
    gesture_logits: [T; NUM_GESTURE_CLASSES],
    pub output: ModelOutput<T>,
    /// Box used for the crop.
    pub crop: BoundingBox,
    /// Hand probability fed to stage 2.
    pub side_p_hand: f64,
}

impl<T: Real> ForwardCache<T> {
    /// On/off state of every ReLU unit, in forward order.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for trunk in [&self.stage1, &self.stage2] {
            for (_, act) in &trunk.convs {
                out.extend(act.iter().map(|v| *v > T::zero()));
            }
            for d in &trunk.dense {
                out.extend(d.activated.iter().map(|v| *v > T::zero()));
            }
        }
        out
    }
}

/// The two-stage network over a fixed [`Architecture`].
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    arch: Architecture,
}

struct Dropout {
    rate: f64,
    rng: ChaCha8Rng,
}

fn trunk_forward<T: Real>(
    convs: &[Conv2d],
    denses: &[Dense],
    params: &ModelParams<T>,
    input: Vec<T>,
    extra: Option<T>,
    dropout: &mut Option<Dropout>,
) -> TrunkCache<T> {
    let mut x = input;
    let mut conv_cache = Vec::with_capacity(convs.len());
    for c in convs {
        let (mut out, cols) =
            c.forward(&x, params.get(&format!("{}.weight", c.name)).data(), params.get(&format!("{}.bias", c.name)).data());
        relu_inplace(&mut out);
        conv_cache.push((cols, out.clone()));
        x = out;
    }
    if let Some(e) = extra {
        x.push(e);
    }
    let mut dense_cache = Vec::with_capacity(denses.len());
    for d in denses {
        let mut out =
            d.forward(&x, params.get(&format!("{}.weight", d.name)).data(), params.get(&format!("{}.bias", d.name)).data());
        relu_inplace(&mut out);
        let activated = out.clone();
        let mask = dropout.as_mut().map(|dr| {
            let keep = T::of(1.0 / (1.0 - dr.rate));
            let m: Vec<T> = (0..out.len()).map(|_| if dr.rng.random::<f64>() < dr.rate { T::zero() } else { keep }).collect();
            for (o, &k) in out.iter_mut().zip(&m) {
                *o *= k;
            }
            m
        });
        dense_cache.push(DenseCache { input: std::mem::replace(&mut x, out), activated, mask });
    }
    TrunkCache { convs: conv_cache, dense: dense_cache, hidden: x }
}

/// Propagates `dhidden` back through the trunk, accumulating into `grads`.
fn trunk_backward<T: Real>(
    convs: &[Conv2d],
    denses: &[Dense],
    params: &ModelParams<T>,
    cache: &TrunkCache<T>,
    dhidden: Vec<T>,
    has_extra: bool,
    grads: &mut ModelParams<T>,
) {
    let mut g = dhidden;
    for (d, dc) in denses.iter().zip(&cache.dense).rev() {
        if let Some(m) = &dc.mask {
            for (gv, &mv) in g.iter_mut().zip(m) {
                *gv *= mv;
            }
        }
        relu_backward_inplace(&dc.activated, &mut g);
        let (dw, db) = grads.layer_mut(&d.name);
        g = d.backward(&dc.input, params.get(&format!("{}.weight", d.name)).data(), &g, dw, db, true).expect("input grad");
    }
    if has_extra {
        g.pop();
    }
    for (i, (c, (cols, activated))) in convs.iter().zip(&cache.convs).enumerate().rev() {
        relu_backward_inplace(activated, &mut g);
        let (dw, db) = grads.layer_mut(&c.name);
        let din = c.backward(cols, params.get(&format!("{}.weight", c.name)).data(), &g, dw, db, i > 0);
        match din {
            Some(d) => g = d,
            None => break,
        }
    }
}

fn to_array<T: Copy, const N: usize>(v: &[T]) -> [T; N] {
    std::array::from_fn(|i| v[i])
}

impl Network {
    pub fn new(config: &ModelConfig) -> Result<Self, ConfigError> {
        Ok(Self { arch: Architecture::new(config)? })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn config(&self) -> &ModelConfig {
        &self.arch.config
    }

    fn check_surface(&self, surface: &TimeSurface) -> Result<(), ConfigError> {
        let g = self.arch.config.geometry;
        if surface.geometry != g || surface.values.len() != 2 * g.pixel_count() {
            return Err(ConfigError::GeometryMismatch {
                expected_w: g.width,
                expected_h: g.height,
                actual_w: surface.geometry.width,
                actual_h: surface.geometry.height,
            });
        }
        Ok(())
    }

    pub fn forward<T: Real>(
        &self,
        params: &ModelParams<T>,
        surface: &TimeSurface,
        opts: &ForwardOptions,
    ) -> Result<ModelOutput<T>, ConfigError> {
        Ok(self.forward_cached(params, surface, opts)?.output)
    }

    pub fn forward_cached<T: Real>(
        &self,
        params: &ModelParams<T>,
        surface: &TimeSurface,
        opts: &ForwardOptions,
    ) -> Result<ForwardCache<T>, ConfigError> {
        self.check_surface(surface)?;
        let a = &self.arch;
        let mut dropout = (opts.training && a.config.dropout > 0.0)
            .then(|| Dropout { rate: a.config.dropout as f64, rng: ChaCha8Rng::seed_from_u64(opts.dropout_seed) });

        let input: Vec<T> = surface.values.iter().map(|&v| T::of(v as f64)).collect();
        let stage1 = trunk_forward(&a.stage1_convs, &a.stage1_dense, params, input, None, &mut dropout);
        let head = |d: &Dense| {
            d.forward(
                &stage1.hidden,
                params.get(&format!("{}.weight", d.name)).data(),
                params.get(&format!("{}.bias", d.name)).data(),
            )
        };
        let bbox_logits: [T; 4] = to_array(&head(&a.bbox_head));
        let hand_logit = head(&a.hand_head)[0];
        let bbox = bbox_logits.map(sigmoid);
        let p_hand = sigmoid(hand_logit);

        let predicted_box = BoundingBox::from_array(bbox.map(|v| v.f64() as f32));
        let crop_box = opts.crop.unwrap_or(predicted_box);
        let side_p_hand = opts.side_p_hand.unwrap_or(p_hand.f64());
        let patch = crop_resize(surface, &crop_box, a.config.crop_size);
        let crop_input: Vec<T> = patch.values.iter().map(|&v| T::of(v as f64)).collect();
        let stage2 =
            trunk_forward(&a.stage2_convs, &a.stage2_dense, params, crop_input, Some(T::of(side_p_hand)), &mut dropout);
        let g = &a.gesture_head;
        let gesture_logits: [T; NUM_GESTURE_CLASSES] = to_array(&g.forward(
            &stage2.hidden,
            params.get(&format!("{}.weight", g.name)).data(),
            params.get(&format!("{}.bias", g.name)).data(),
        ));
        let gesture_probs = to_array(&softmax(&gesture_logits));
        let output = ModelOutput::combine(bbox, p_hand, gesture_probs);
        Ok(ForwardCache {
            stage1,

            hand_logit,
            stage2,
            gesture_logits,
            output,
            crop: crop_box,
            side_p_hand,
        })
    }

    /// Accumulates `scales`-weighted gradients of the loss for one sample into `grads`.
    /// No gradient flows through the crop box or the hand probability fed to stage 2.
    pub fn backward<T: Real>(
        &self,
        params: &ModelParams<T>,
        cache: &ForwardCache<T>,
        target: &Target,
        scales: LossScales,
        grads: &mut ModelParams<T>,
    ) {
        let a = &self.arch;
        let out = &cache.output;
        let label = target.label;

        let mut d_hand = T::zero();
        let mut d_gesture = [T::zero(); NUM_GESTURE_CLASSES];
        let log_prob = match label {
            GestureClass::NoHand => log_sigmoid(-cache.hand_logit.f64()),
            _ => {
                let z = cache.gesture_logits.map(|v| v.f64());
                log_sigmoid(cache.hand_logit.f64()) + super::layers::log_softmax(&z)[label.index() - 1]
            }
        };
        if log_prob >= PROB_EPSILON.ln() && scales.gesture != 0.0 {
            let s = T::of(scales.gesture);
            if label == GestureClass::NoHand {
                d_hand = out.p_hand * s;
            } else {
                d_hand = (out.p_hand - T::one()) * s;
                for (i, d) in d_gesture.iter_mut().enumerate() {
                    let onehot = if i + 1 == label.index() { T::one() } else { T::zero() };
                    *d = (out.gesture_probs[i] - onehot) * s;
                }
            }
        }

        let mut d_bbox = [T::zero(); 4];
        if let Some(b) = bbox_active(target) {
            let s = T::of(scales.bbox * 2.0 / 4.0);
            for (i, t) in b.to_array().into_iter().enumerate() {
                let y = out.bbox[i];
                d_bbox[i] = s * (y - T::of(t as f64)) * y * (T::one() - y);
            }
        }

        let zero = T::zero();
        if d_gesture.iter().any(|v| *v != zero) {
            let g = &a.gesture_head;
            let (dw, db) = grads.layer_mut(&g.name);
            let dh = g
                .backward(&cache.stage2.hidden, params.get(&format!("{}.weight", g.name)).data(), &d_gesture, dw, db, true)
                .expect("input grad");
            trunk_backward(&a.stage2_convs, &a.stage2_dense, params, &cache.stage2, dh, true, grads);
        }

        let mut dh1 = vec![T::zero(); cache.stage1.hidden.len()];
        let mut any = false;
        for (head, dout) in [(&a.hand_head, &[d_hand][..]), (&a.bbox_head, &d_bbox[..])] {
            let (dw, db) = grads.layer_mut(&head.name);
            let dh = head
                .backward(&cache.stage1.hidden, params.get(&format!("{}.weight", head.name)).data(), dout, dw, db, true)
                .expect("input grad");
            for (acc, v) in dh1.iter_mut().zip(dh) {
                *acc += v;
            }
            any |= dout.iter().any(|v| *v != zero);
        }
        if any {
            trunk_backward(&a.stage1_convs, &a.stage1_dense, params, &cache.stage1, dh1, false, grads);
        }
    }
}
