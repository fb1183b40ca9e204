//! Experiment configuration: one JSON document for the whole workflow.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use cfcn_core::cascade::{CascadeConfig, CascadeCrf};
use cfcn_core::densecrf::SearchSpace;
use cfcn_core::minifcn::{BalanceScope, NetConfig, OptimizerKind, TrainConfig};
use cfcn_core::phantom::PhantomSpec;
use cfcn_core::preprocess::{AugmentParams, PreprocessConfig};
use cfcn_core::seed::derive_named;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Liver,
    Lesion,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Liver => "liver",
            Role::Lesion => "lesion",
        }
    }
}

/// Liver mask used to cut the lesion network's training ROIs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RoiSource {
    #[default]
    Truth,
    /// Step-1 predictions of the trained liver network.
    Predicted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    /// Existing manifest to use; defaults to `<out>/dataset/manifest.json`.
    pub manifest: Option<PathBuf>,
    pub volumes: usize,
    pub train_fraction: f64,
    pub phantom: PhantomSpec,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            volumes: 20,
            train_fraction: 0.8,
            phantom: PhantomSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrfSearchConfig {
    /// `None` leaves the stage unrefined.
    pub liver: Option<SearchSpace>,
    pub lesion: Option<SearchSpace>,
    pub budget: usize,
    /// Use at most this many training cases.
    pub max_cases: Option<usize>,
}

impl Default for CrfSearchConfig {
    fn default() -> Self {
        let narrow = SearchSpace {
            sigma_pos: cfcn_core::densecrf::LogRange(0.5, 4.0),
            sigma_bil: cfcn_core::densecrf::LogRange(0.5, 2.0),
            sigma_int: cfcn_core::densecrf::LogRange(0.01, 0.5),
            w_pos: cfcn_core::densecrf::LogRange(0.01, 3.0),
            w_bil: cfcn_core::densecrf::LogRange(0.01, 3.0),
            iterations: 5,
            include_baseline: true,
        };
        Self {
            liver: Some(narrow.clone()),
            lesion: Some(narrow),
            budget: 12,
            max_cases: Some(4),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OverlayConfig {
    /// Render the middle axial slice plus every k-th slice; 0 renders only the middle one.
    pub every_k: usize,
}

impl Default for OverlayConfig {
    fn default() -> Self {
        Self { every_k: 16 }
    }
}

/// The whole workflow. Module seeds (phantoms, weight init, shuffling,
/// augmentation, CRF search) are derived from `seed`; seed fields inside the
/// nested configs are overwritten.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub preprocess: PreprocessConfig,
    pub augment: Option<AugmentParams>,
    pub liver_net: NetConfig,
    pub lesion_net: NetConfig,
    pub liver_train: TrainConfig,
    pub lesion_train: TrainConfig,
    pub lesion_roi: RoiSource,
    pub cascade: CascadeConfig,
    pub crf: CascadeCrf,
    pub crf_search: CrfSearchConfig,
    pub overlay: OverlayConfig,
}

fn adam(eval_every: usize) -> TrainConfig {
    TrainConfig {
        optimizer: OptimizerKind::Adam,
        lr: 0.001,
        eval_every,
        ..TrainConfig::default()
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            dataset: DatasetConfig::default(),
            preprocess: PreprocessConfig {
                equalize: false,
                ..PreprocessConfig::default()
            },
            augment: None,
            liver_net: NetConfig::default(),
            lesion_net: NetConfig::default(),
            liver_train: adam(250),
            lesion_train: TrainConfig {
                lr: 0.002,
                balance_scope: BalanceScope::Dataset,
                ..adam(100)
            },
            lesion_roi: RoiSource::Truth,
            cascade: CascadeConfig {
                largest_component: true,
                ..CascadeConfig::default()
            },
            crf: CascadeCrf::default(),
            crf_search: CrfSearchConfig::default(),
            overlay: OverlayConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn phantom_seed(&self) -> u64 {
        derive_named(self.seed, "phantom")
    }

    pub fn crf_seed(&self, role: Role) -> u64 {
        derive_named(self.seed, &format!("crf/{}", role.name()))
    }

    /// Training settings for `role` with derived seeds and the shared augmentation.
    pub fn train_config(&self, role: Role) -> TrainConfig {
        let base = match role {
            Role::Liver => &self.liver_train,
            Role::Lesion => &self.lesion_train,
        };
        let augment = self.augment.clone().or_else(|| base.augment.clone()).map(|a| AugmentParams {
            seed: derive_named(self.seed, &format!("augment/{}", role.name())),
            ..a
        });
        TrainConfig {
            seed: derive_named(self.seed, &format!("train/{}", role.name())),
            augment,
            ..base.clone()
        }
    }

    pub fn net_config(&self, role: Role) -> NetConfig {
        match role {
            Role::Liver => self.liver_net,
            Role::Lesion => self.lesion_net,
        }
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.dataset
            .manifest
            .clone()
            .unwrap_or_else(|| self.out_dir.join("dataset").join("manifest.json"))
    }

    pub fn checkpoint_path(&self, role: Role) -> PathBuf {
        self.out_dir.join("models").join(format!("{}.json", role.name()))
    }

    pub fn curve_path(&self, role: Role) -> PathBuf {
        self.out_dir.join("models").join(format!("{}_curve.csv", role.name()))
    }

    pub fn segment_dir(&self) -> PathBuf {
        self.out_dir.join("segment")
    }

    pub fn crf_dir(&self) -> PathBuf {
        self.out_dir.join("crf")
    }

    pub fn crf_params_path(&self) -> PathBuf {
        self.crf_dir().join("crf_params.json")
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.out_dir.join("eval")
    }
}

/// Pretty JSON with a trailing newline; parent directories are created.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_and_partial_documents_fill_defaults() {
        let c = ExperimentConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&text).unwrap(), c);
        let p: ExperimentConfig = serde_json::from_str(r#"{"seed": 9, "dataset": {"volumes": 4}}"#).unwrap();
        assert_eq!(p.seed, 9);
        assert_eq!(p.dataset.volumes, 4);
        assert_eq!(p.dataset.train_fraction, 0.8);
    }

    #[test]
    fn derived_seeds_depend_on_role_and_top_seed() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig {
            seed: 1,
            ..ExperimentConfig::default()
        };
        assert_ne!(a.train_config(Role::Liver).seed, a.train_config(Role::Lesion).seed);
        assert_ne!(a.train_config(Role::Liver).seed, b.train_config(Role::Liver).seed);
        assert_ne!(a.crf_seed(Role::Liver), a.crf_seed(Role::Lesion));
    }
}
