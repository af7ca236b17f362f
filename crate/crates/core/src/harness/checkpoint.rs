//! Flat little-endian f64 checkpoints with a JSON manifest.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::train::{Classifier, MlpSpec};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the checkpoint file.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub mlp: MlpSpec,
    pub tensors: Vec<TensorEntry>,
}

/// Writes `checkpoint.bin` and `manifest.json` into `dir`.
pub fn write_checkpoint(model: &Classifier, dir: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(model.num_parameters() * 8);
    let mut tensors = Vec::new();
    for (name, t) in model.parameter_names().into_iter().zip(model.parameters()) {
        tensors.push(TensorEntry {
            name,
            shape: t.shape().to_vec(),
            offset: bytes.len(),
        });
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let bin = dir.join(CHECKPOINT_FILE);
    std::fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
    let manifest = Manifest {
        mlp: model.spec.clone(),
        tensors,
    };
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
}

/// Reads a model written by [`write_checkpoint`].
pub fn read_checkpoint(dir: &Path) -> Result<Classifier> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(Error::Missing(path));
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let bin = dir.join(CHECKPOINT_FILE);
    if !bin.exists() {
        return Err(Error::Missing(bin));
    }
    let bytes = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let mut named = Vec::with_capacity(manifest.tensors.len());
    for entry in manifest.tensors {
        let n: usize = entry.shape.iter().product();
        let end = entry.offset + 8 * n;
        if end > bytes.len() {
            return Err(Error::invalid(format!(
                "tensor `{}` runs past the end of the checkpoint",
                entry.name
            )));
        }
        let data = bytes[entry.offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        named.push((entry.name, Tensor::new(entry.shape, data)?));
    }
    Classifier::from_named(&manifest.mlp, named)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rand_dists::SeededRng;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = MlpSpec {
            hidden: vec![3],
            ..MlpSpec::default()
        };
        let model = Classifier::init(&spec, 2, 4, &mut SeededRng::new(9)).unwrap();
        write_checkpoint(&model, dir.path()).unwrap();
        assert_eq!(read_checkpoint(dir.path()).unwrap(), model);
        let bytes = std::fs::read(dir.path().join(CHECKPOINT_FILE)).unwrap();
        assert_eq!(bytes.len(), model.num_parameters() * 8);
    }

    #[test]
    fn missing_files_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_checkpoint(dir.path()), Err(Error::Missing(_))));
    }
}
