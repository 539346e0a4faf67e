use super::config::{Architecture, ConfigError};
use super::tensor::{Real, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::collections::BTreeMap;

/// Named parameter tensors. Gradients and Adam moments use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T = f32> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> ModelParams<T> {
    pub fn zeros(arch: &Architecture) -> Self {
        let tensors = arch.param_shapes().into_iter().map(|(name, shape)| (name, Tensor::zeros(&shape))).collect();
        Self { tensors }
    }

    /// He-normal weights, zero biases.
    pub fn init(arch: &Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Self::zeros(arch);
        for (name, shape) in arch.param_shapes() {
            if !name.ends_with(".weight") {
                continue;
            }
            let fan_in: usize = shape[1..].iter().product();
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            for v in params.get_mut(&name).data_mut() {
                *v = T::of(normal.sample(&mut rng));
            }
        }
        params
    }

    pub fn from_tensors(tensors: BTreeMap<String, Tensor<T>>) -> Self {
        Self { tensors }
    }

    /// Checks that the names and shapes match `arch` exactly.
    pub fn check(&self, arch: &Architecture) -> Result<(), ConfigError> {
        let shapes = arch.param_shapes();
        for (name, shape) in &shapes {
            let t = self.tensors.get(name).ok_or_else(|| ConfigError::MissingParameter(name.clone()))?;
            if t.shape() != shape.as_slice() {
                return Err(ConfigError::ShapeMismatch {
                    name: name.clone(),
                    expected: shape.clone(),
                    actual: t.shape().to_vec(),
                });
            }
        }
        if let Some(extra) = self.tensors.keys().find(|k| !shapes.iter().any(|(n, _)| n == *k)) {
            return Err(ConfigError::UnexpectedParameter(extra.clone()));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> &Tensor<T> {
        self.tensors.get(name).unwrap_or_else(|| panic!("no parameter named {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor<T> {
        self.tensors.get_mut(name).unwrap_or_else(|| panic!("no parameter named {name}"))
    }

    /// Mutable `(weight, bias)` of the layer named `layer`.
    pub fn layer_mut(&mut self, layer: &str) -> (&mut [T], &mut [T]) {
        let (wname, bname) = (format!("{layer}.weight"), format!("{layer}.bias"));
        let (mut weight, mut bias) = (None, None);
        for (k, v) in &mut self.tensors {
            if *k == wname {
                weight = Some(v.data_mut());
            } else if *k == bname {
                bias = Some(v.data_mut());
            }
        }
        match (weight, bias) {
            (Some(w), Some(b)) => (w, b),
            _ => panic!("no layer named {layer}"),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn into_tensors(self) -> BTreeMap<String, Tensor<T>> {
        self.tensors
    }

    pub fn count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams { tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect() }
    }

    pub fn zeros_like(&self) -> Self {
        Self { tensors: self.tensors.iter().map(|(k, v)| (k.clone(), Tensor::zeros(v.shape()))).collect() }
    }

    /// `self += other * scale` for every tensor.
    pub fn add_scaled(&mut self, other: &Self, scale: T) {
        for (k, v) in &mut self.tensors {
            v.add_scaled(&other.tensors[k], scale);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Tensor::all_finite)
    }
}

pub fn count_params<T: Real>(params: &ModelParams<T>) -> usize {
    params.count()
}
