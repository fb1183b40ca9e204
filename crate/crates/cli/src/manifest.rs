//! Dataset manifest: case ids, seeds, split membership and file paths.

use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use cfcn_core::phantom::{PhantomCase, PhantomSpec, Split};
use cfcn_core::volgrid::{load_labels, load_volume, save_volume, LabelVolume, Volume};
use serde::{Deserialize, Serialize};

use crate::config::{read_json, write_json};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestCase {
    pub id: String,
    pub seed: u64,
    pub split: Split,
    /// Relative to the manifest's directory.
    pub volume: PathBuf,
    pub labels: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub phantom: PhantomSpec,
    pub cases: Vec<ManifestCase>,
}

/// A manifest together with the directory its paths are relative to.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
    pub root: PathBuf,
}

impl Dataset {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            bail!("dataset manifest {} not found; run `cfcn phantom` first", path.display());
        }
        let manifest: Manifest = read_json(path)?;
        let root = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
        Ok(Self { manifest, root })
    }

    /// Writes `cases` as volumes, labels and `manifest.json` under `dir`.
    pub fn write(dir: &Path, seed: u64, phantom: &PhantomSpec, cases: &[PhantomCase]) -> Result<Self> {
        let mut entries = Vec::with_capacity(cases.len());
        for c in cases {
            let volume = PathBuf::from("volumes").join(format!("{}.json", c.id));
            let labels = PathBuf::from("labels").join(format!("{}.json", c.id));
            save_volume(&c.volume, dir.join(&volume))?;
            save_volume(&c.labels, dir.join(&labels))?;
            entries.push(ManifestCase {
                id: c.id.clone(),
                seed: c.seed,
                split: c.split,
                volume,
                labels,
            });
        }
        let manifest = Manifest {
            seed,
            phantom: phantom.clone(),
            cases: entries,
        };
        write_json(&dir.join("manifest.json"), &manifest)?;
        Ok(Self {
            manifest,
            root: dir.to_path_buf(),
        })
    }

    pub fn cases(&self, split: Option<Split>) -> impl Iterator<Item = &ManifestCase> {
        self.manifest
            .cases
            .iter()
            .filter(move |c| split.is_none_or(|s| c.split == s))
    }

    pub fn labels_dir(&self) -> PathBuf {
        self.root.join("labels")
    }

    pub fn load_case(&self, c: &ManifestCase) -> Result<(Volume, LabelVolume)> {
        Ok((
            load_volume(self.root.join(&c.volume))?,
            load_labels(self.root.join(&c.labels))?,
        ))
    }
}
