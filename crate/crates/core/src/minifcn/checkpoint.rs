//! Checkpoints: a JSON header plus a little-endian f32 blob (`<stem>.bin`).

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ConvLayer, MiniFcn, NetConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the blob, in f32 elements.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: NetConfig,
    pub tensors: Vec<TensorEntry>,
    pub raw: String,
}

impl TensorEntry {
    fn len(&self) -> usize {
        self.shape.iter().product()
    }
}

pub fn save_checkpoint(net: &MiniFcn<f32>, path: &Path) -> Result<()> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::InvalidParameter(format!("bad checkpoint path {}", path.display())))?;
    let raw = format!("{stem}.bin");
    let mut tensors = Vec::new();
    let mut blob = Vec::with_capacity(net.num_params() * 4);
    let mut offset = 0;
    for l in net.layers() {
        for (suffix, shape, data) in [
            ("weight", vec![l.cout, l.cin, l.k, l.k], &l.weight),
            ("bias", vec![l.cout], &l.bias),
        ] {
            tensors.push(TensorEntry {
                name: format!("{}.{suffix}", l.name),
                shape,
                offset,
            });
            offset += data.len();
            for v in data {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let header = CheckpointHeader {
        config: *net.config(),
        tensors,
        raw: raw.clone(),
    };
    let dir = path.parent().unwrap_or(Path::new(""));
    if !dir.as_os_str().is_empty() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let blob_path = dir.join(&raw);
    std::fs::write(&blob_path, &blob).map_err(|e| Error::io(&blob_path, e))?;
    let mut json = serde_json::to_string_pretty(&header).map_err(|e| Error::json(path, e))?;
    json.push('\n');
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn read_header(path: &Path) -> Result<CheckpointHeader> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// Loads a checkpoint, failing if its config differs from `expected`.
pub fn load_checkpoint(path: &Path, expected: &NetConfig) -> Result<MiniFcn<f32>> {
    let header = read_header(path)?;
    if header.config != *expected {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint has {:?}, requested {:?}",
            header.config, expected
        )));
    }
    let blob_path = path.parent().unwrap_or(Path::new("")).join(&header.raw);
    let bytes = std::fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::SizeMismatch(format!(
            "{} bytes is not a whole number of f32",
            bytes.len()
        )));
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let take = |name: &str, shape: &[usize]| -> Result<Vec<f32>> {
        let e = header
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::ConfigMismatch(format!("missing tensor {name}")))?;
        if e.shape != shape {
            return Err(Error::ShapeMismatch {
                expected: shape.to_vec(),
                actual: e.shape.clone(),
            });
        }
        values
            .get(e.offset..e.offset + e.len())
            .map(<[f32]>::to_vec)
            .ok_or_else(|| Error::SizeMismatch(format!("tensor {name} exceeds blob")))
    };
    let layers = expected
        .layer_specs()
        .into_iter()
        .map(|(name, cin, cout, k)| {
            Ok(ConvLayer {
                weight: take(&format!("{name}.weight"), &[cout, cin, k, k])?,
                bias: take(&format!("{name}.bias"), &[cout])?,
                name,
                cin,
                cout,
                k,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    MiniFcn::from_layers(*expected, layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream_rng;
    use crate::volgrid::Plane;

    fn cfg(depth: usize) -> NetConfig {
        NetConfig {
            depth,
            base_channels: 4,
            ..NetConfig::default()
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("net.json");
        let net = MiniFcn::<f32>::new(cfg(2), &mut stream_rng(3, 0)).unwrap();
        save_checkpoint(&net, &p).unwrap();
        let back = load_checkpoint(&p, &cfg(2)).unwrap();
        assert_eq!(back, net);
        let img = Plane::new(8, 8, (0..64).map(|i| i as f32 / 64.0).collect()).unwrap();
        assert_eq!(net.forward(&[img.clone()]).unwrap(), back.forward(&[img]).unwrap());
    }

    #[test]
    fn depth_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("net.json");
        save_checkpoint(&MiniFcn::<f32>::zeros(cfg(1)).unwrap(), &p).unwrap();
        assert!(matches!(load_checkpoint(&p, &cfg(2)), Err(Error::ConfigMismatch(_))));
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("net.json");
        save_checkpoint(&MiniFcn::<f32>::zeros(cfg(1)).unwrap(), &p).unwrap();
        let blob = dir.path().join("net.bin");
        let bytes = std::fs::read(&blob).unwrap();
        std::fs::write(&blob, &bytes[..bytes.len() - 8]).unwrap();
        assert!(load_checkpoint(&p, &cfg(1)).is_err());
    }
}
