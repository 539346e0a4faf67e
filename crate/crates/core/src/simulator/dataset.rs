//! Labeled dataset construction: one HEV1 file per scenario plus `manifest.json`.
//!
//! Layout: `<out>/<split>/<class>/<seed>.hev1` and `<out>/manifest.json`.

use super::esim::{generate_events, EsimConfig};
use super::scene::ScenarioSpec;
use super::{GestureClass, SimError};
use crate::events::{decode_events, encode_events, DecodeError, EventStream, SensorGeometry};
use crate::seed;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the manifest root.
    pub path: PathBuf,
    pub label: GestureClass,
    pub duration: f64,
    pub seed: u64,
    pub split: Split,
    /// Full scenario, so per-window hand boxes can be recomputed.
    pub spec: ScenarioSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    #[serde(skip)]
    pub root: PathBuf,
    pub geometry: SensorGeometry,
    pub esim: EsimConfig,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Decode {
        path: PathBuf,
        #[source]
        source: DecodeError,
    },
    #[error("{path}: malformed manifest: {source}")]
    Manifest {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("unsupported manifest version {0}")]
    Version(u32),
    #[error("split fraction must be in (0, 1), got {0}")]
    SplitFraction(f64),
    #[error("no scenarios to build")]
    Empty,
    #[error("duplicate scenario seed {seed} for class {label}")]
    DuplicateSeed { label: GestureClass, seed: u64 },
    #[error("scenarios must share one sensor geometry")]
    MixedGeometry,
    #[error(transparent)]
    Sim(#[from] SimError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

/// `per_class` randomized scenarios for each class, seeded from `base_seed`.
pub fn default_specs(
    classes: &[GestureClass],
    per_class: usize,
    base_seed: u64,
    geometry: SensorGeometry,
    duration: f64,
) -> Vec<ScenarioSpec> {
    classes
        .iter()
        .flat_map(|&c| {
            (0..per_class).map(move |i| {
                let s = seed::derive(base_seed, &[c.index() as u64, i as u64]);
                ScenarioSpec::sample(c, geometry, s, duration)
            })
        })
        .collect()
}

/// Stratified split: within each class, scenarios are ordered by a hash of
/// their seed and the first `round(n * split_fraction)` go to training.
pub fn assign_splits(specs: &[ScenarioSpec], split_fraction: f64) -> Vec<Split> {
    let mut by_class: BTreeMap<GestureClass, Vec<usize>> = BTreeMap::new();
    for (i, s) in specs.iter().enumerate() {
        by_class.entry(s.label).or_default().push(i);
    }
    let mut splits = vec![Split::Val; specs.len()];
    for idx in by_class.values_mut() {
        idx.sort_by_key(|&i| (seed::splitmix64(specs[i].seed), i));
        let n_train = ((idx.len() as f64 * split_fraction).round() as usize).min(idx.len());
        for &i in &idx[..n_train] {
            splits[i] = Split::Train;
        }
    }
    splits
}

pub fn build_dataset(
    specs: &[ScenarioSpec],
    config: &EsimConfig,
    split_fraction: f64,
    out: &Path,
) -> Result<DatasetManifest, DatasetError> {
    if !(split_fraction > 0.0 && split_fraction < 1.0) {
        return Err(DatasetError::SplitFraction(split_fraction));
    }
    let first = specs.first().ok_or(DatasetError::Empty)?;
    if specs.iter().any(|s| s.geometry != first.geometry) {
        return Err(DatasetError::MixedGeometry);
    }
    config.validate()?;
    let mut seen = std::collections::HashSet::new();
    for s in specs {
        s.validate()?;
        if !seen.insert((s.label, s.seed)) {
            return Err(DatasetError::DuplicateSeed { label: s.label, seed: s.seed });
        }
    }

    let splits = assign_splits(specs, split_fraction);
    let entries: Vec<ManifestEntry> = specs
        .iter()
        .zip(&splits)
        .map(|(spec, &split)| ManifestEntry {
            path: PathBuf::from(split.to_string())
                .join(spec.label.name())
                .join(format!("{}.hev1", spec.seed)),
            label: spec.label,
            duration: spec.duration,
            seed: spec.seed,
            split,
            spec: spec.clone(),
        })
        .collect();

    entries.par_iter().try_for_each(|entry| -> Result<(), DatasetError> {
        let stream = generate_events(&entry.spec, config)?;
        let bytes = encode_events(&stream).expect("simulator output is always valid");
        let path = out.join(&entry.path);
        let dir = path.parent().expect("entry path has a parent");
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        std::fs::write(&path, bytes).map_err(io_err(&path))
    })?;

    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        root: out.to_path_buf(),
        geometry: first.geometry,
        esim: *config,
        entries,
    };
    let path = out.join(MANIFEST_FILE);
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, json).map_err(io_err(&path))?;
    Ok(manifest)
}

impl DatasetManifest {
    /// Reads `<dir>/manifest.json`.
    pub fn load(dir: &Path) -> Result<Self, DatasetError> {
        let path = dir.join(MANIFEST_FILE);
        let bytes = std::fs::read(&path).map_err(io_err(&path))?;
        let mut m: DatasetManifest = serde_json::from_slice(&bytes)
            .map_err(|source| DatasetError::Manifest { path: path.clone(), source })?;
        if m.version != MANIFEST_VERSION {
            return Err(DatasetError::Version(m.version));
        }
        m.root = dir.to_path_buf();
        Ok(m)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn read_stream(&self, entry: &ManifestEntry) -> Result<EventStream, DatasetError> {
        let path = self.root.join(&entry.path);
        let bytes = std::fs::read(&path).map_err(io_err(&path))?;
        decode_events(&bytes).map_err(|source| DatasetError::Decode { path, source })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geometry() -> SensorGeometry {
        SensorGeometry::new(24, 24)
    }

    #[test]
    fn stratified_counts() {
        let specs = default_specs(&GestureClass::ALL, 10, 5, geometry(), 0.1);
        let splits = assign_splits(&specs, 0.9);
        for c in GestureClass::ALL {
            let train = specs.iter().zip(&splits).filter(|(s, sp)| s.label == c && **sp == Split::Train).count();
            assert_eq!(train, 9, "{c}");
        }
        assert_eq!(splits.iter().filter(|s| **s == Split::Train).count(), 63);
        assert_eq!(splits.iter().filter(|s| **s == Split::Val).count(), 7);
    }

    #[test]
    fn build_writes_files_and_is_reproducible() {
        let specs = default_specs(&GestureClass::ALL, 3, 9, geometry(), 0.05);
        let cfg = EsimConfig::default();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = build_dataset(&specs, &cfg, 0.6, a.path()).unwrap();
        let mb = build_dataset(&specs, &cfg, 0.6, b.path()).unwrap();
        assert_eq!(ma.entries, mb.entries);
        for e in &ma.entries {
            let fa = std::fs::read(a.path().join(&e.path)).unwrap();
            let fb = std::fs::read(b.path().join(&e.path)).unwrap();
            assert_eq!(fa, fb);
            assert!(e.path.starts_with(e.split.to_string()));
        }
        let loaded = DatasetManifest::load(a.path()).unwrap();
        assert_eq!(loaded, ma);
        assert_eq!(loaded.count(Split::Train) + loaded.count(Split::Val), 21);
        let s = loaded.read_stream(&loaded.entries[0]).unwrap();
        assert_eq!(s.geometry, geometry());
    }

    #[test]
    fn build_errors() {
        let specs = default_specs(&[GestureClass::Rest], 2, 1, geometry(), 0.05);
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            build_dataset(&specs, &EsimConfig::default(), 1.0, dir.path()),
            Err(DatasetError::SplitFraction(_))
        ));
        assert!(matches!(
            build_dataset(&[], &EsimConfig::default(), 0.5, dir.path()),
            Err(DatasetError::Empty)
        ));
        let dup = vec![specs[0].clone(), specs[0].clone()];
        assert!(matches!(
            build_dataset(&dup, &EsimConfig::default(), 0.5, dir.path()),
            Err(DatasetError::DuplicateSeed { .. })
        ));
        let missing = DatasetManifest::load(&dir.path().join("nope")).unwrap_err();
        assert!(missing.to_string().contains("manifest.json"));
    }
}
