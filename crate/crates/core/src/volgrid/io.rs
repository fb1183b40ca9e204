//! Sidecar file format: a JSON metadata file next to a raw little-endian blob.
//!
//! ```json
//! {"shape":[64,64,64],"spacing_mm":[1.0,1.0,2.0],"dtype":"f32le",
//!  "kind":"intensity","raw":"case_000_image.raw"}
//! ```
//!
//! Intensities and probabilities are `f32le`, labels are `u8`. `num_labels`
//! is present only for probability volumes, whose label axis is innermost.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Grid, LabelVolume, ProbVolume, Volume};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VolumeKind {
    Intensity,
    Labels,
    Probs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub shape: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub dtype: String,
    pub kind: VolumeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_labels: Option<usize>,
    /// Blob path relative to the sidecar's directory.
    pub raw: String,
}

impl Sidecar {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    fn grid(&self) -> Result<Grid> {
        Grid::new(self.shape, self.spacing_mm)
    }

    fn raw_path(&self, sidecar: &Path) -> PathBuf {
        sidecar
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(&self.raw)
    }

    fn read_blob(&self, sidecar: &Path, elem_size: usize, elems: usize) -> Result<Vec<u8>> {
        let raw = self.raw_path(sidecar);
        let bytes = fs::read(&raw).map_err(|e| Error::io(&raw, e))?;
        if bytes.len() != elem_size * elems {
            return Err(Error::SizeMismatch(format!(
                "{} holds {} bytes, metadata implies {} x {} = {}",
                raw.display(),
                bytes.len(),
                elems,
                elem_size,
                elems * elem_size
            )));
        }
        Ok(bytes)
    }

    fn expect(&self, kind: VolumeKind, dtype: &str, path: &Path) -> Result<()> {
        if self.kind != kind || self.dtype != dtype {
            return Err(Error::InvalidValue(format!(
                "{}: expected kind {kind:?} with dtype {dtype}, found {:?}/{}",
                path.display(),
                self.kind,
                self.dtype
            )));
        }
        Ok(())
    }
}

/// Volumes that can be written to and read from the sidecar format.
pub trait VolumeFile: Sized {
    fn save(&self, path: &Path) -> Result<()>;
    fn load(path: &Path) -> Result<Self>;
}

fn raw_name(path: &Path) -> Result<String> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::InvalidParameter(format!("bad sidecar path {}", path.display())))?;
    Ok(format!("{stem}.raw"))
}

fn write_pair(path: &Path, meta: &Sidecar, blob: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let raw = meta.raw_path(path);
    fs::write(&raw, blob).map_err(|e| Error::io(&raw, e))?;
    let mut text = serde_json::to_string_pretty(meta).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn f32_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn f32_from_bytes(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

impl VolumeFile for Volume {
    fn save(&self, path: &Path) -> Result<()> {
        let meta = Sidecar {
            shape: self.shape(),
            spacing_mm: self.spacing(),
            dtype: "f32le".into(),
            kind: VolumeKind::Intensity,
            num_labels: None,
            raw: raw_name(path)?,
        };
        write_pair(path, &meta, &f32_bytes(self.data()))
    }

    fn load(path: &Path) -> Result<Self> {
        let meta = Sidecar::read(path)?;
        meta.expect(VolumeKind::Intensity, "f32le", path)?;
        let grid = meta.grid()?;
        let bytes = meta.read_blob(path, 4, grid.len())?;
        Volume::new(grid, f32_from_bytes(&bytes))
    }
}

impl VolumeFile for LabelVolume {
    fn save(&self, path: &Path) -> Result<()> {
        let meta = Sidecar {
            shape: self.shape(),
            spacing_mm: self.grid().spacing,
            dtype: "u8".into(),
            kind: VolumeKind::Labels,
            num_labels: None,
            raw: raw_name(path)?,
        };
        write_pair(path, &meta, self.labels())
    }

    fn load(path: &Path) -> Result<Self> {
        let meta = Sidecar::read(path)?;
        meta.expect(VolumeKind::Labels, "u8", path)?;
        let grid = meta.grid()?;
        let bytes = meta.read_blob(path, 1, grid.len())?;
        LabelVolume::new(grid, bytes)
    }
}

impl VolumeFile for ProbVolume {
    fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let meta = Sidecar {
            shape: self.shape(),
            spacing_mm: self.grid().spacing,
            dtype: "f32le".into(),
            kind: VolumeKind::Probs,
            num_labels: Some(self.num_labels()),
            raw: raw_name(path)?,
        };
        write_pair(path, &meta, &f32_bytes(self.probs()))
    }

    fn load(path: &Path) -> Result<Self> {
        let meta = Sidecar::read(path)?;
        meta.expect(VolumeKind::Probs, "f32le", path)?;
        let num_labels = meta.num_labels.ok_or_else(|| {
            Error::InvalidValue(format!("{}: probs sidecar lacks num_labels", path.display()))
        })?;
        let grid = meta.grid()?;
        let bytes = meta.read_blob(path, 4, grid.len() * num_labels)?;
        ProbVolume::new(grid, num_labels, f32_from_bytes(&bytes))
    }
}

/// Writes any volume kind as `path` (sidecar) plus a sibling `.raw` blob.
pub fn save_volume<V: VolumeFile>(v: &V, path: impl AsRef<Path>) -> Result<()> {
    v.save(path.as_ref())
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume> {
    Volume::load(path.as_ref())
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelVolume> {
    LabelVolume::load(path.as_ref())
}

pub fn load_probs(path: impl AsRef<Path>) -> Result<ProbVolume> {
    ProbVolume::load(path.as_ref())
}
