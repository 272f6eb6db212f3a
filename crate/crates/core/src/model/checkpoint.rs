//! Checkpoints: `manifest.json` describing named tensors plus `params.bin`
//! holding their values as little-endian `f64`, in manifest order.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::error::{DftError, Result};
use crate::params::ParamGroup;
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: &str = "dft-ckpt-1";

const MANIFEST: &str = "manifest.json";
const VALUES: &str = "params.bin";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: String,
    dtype: String,
    config: ModelConfig,
    tensors: Vec<Entry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    name: String,
    group: ParamGroup,
    shape: [usize; 2],
}

/// Writes `model` into directory `dir`, creating it if needed.
pub fn save_checkpoint(model: &Model, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| DftError::io(dir, e))?;
    let mut bytes = Vec::new();
    let mut tensors = Vec::new();
    for (_, p) in model.store().iter() {
        tensors.push(Entry {
            name: p.name.clone(),
            group: p.group,
            shape: p.value.shape(),
        });
        for v in p.value.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        version: CHECKPOINT_VERSION.to_string(),
        dtype: "f64".to_string(),
        config: model.config().clone(),
        tensors,
    };
    let path = dir.join(MANIFEST);
    let json = serde_json::to_string_pretty(&manifest).map_err(|source| DftError::Json {
        path: path.clone(),
        source,
    })?;
    fs::write(&path, json).map_err(|e| DftError::io(&path, e))?;
    let path = dir.join(VALUES);
    fs::write(&path, bytes).map_err(|e| DftError::io(&path, e))
}

/// Rebuilds a model from a directory written by [`save_checkpoint`].
pub fn load_checkpoint(dir: &Path) -> Result<Model> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| DftError::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|source| DftError::Json {
        path: path.clone(),
        source,
    })?;
    if manifest.version != CHECKPOINT_VERSION || manifest.dtype != "f64" {
        return Err(DftError::Parse {
            path,
            line: 0,
            message: format!(
                "unsupported checkpoint version {:?} dtype {:?}",
                manifest.version, manifest.dtype
            ),
        });
    }
    let values_path = dir.join(VALUES);
    let bytes = fs::read(&values_path).map_err(|e| DftError::io(&values_path, e))?;
    let expected: usize = manifest.tensors.iter().map(|e| e.shape[0] * e.shape[1]).sum();
    if bytes.len() != expected * 8 {
        return Err(DftError::Integrity {
            path: values_path,
            what: "checkpoint bytes".into(),
            expected: (expected * 8) as u64,
            actual: bytes.len() as u64,
        });
    }
    // The layout depends only on the config; initial values are overwritten.
    let mut model = Model::new(manifest.config, &mut ChaCha8Rng::seed_from_u64(0))?;
    if model.store().len() != manifest.tensors.len() {
        return Err(DftError::contract(format!(
            "checkpoint lists {} tensors, config implies {}",
            manifest.tensors.len(),
            model.store().len()
        )));
    }
    let mut offset = 0;
    for entry in &manifest.tensors {
        let id = model
            .store()
            .find(&entry.name)
            .ok_or_else(|| DftError::contract(format!("unknown tensor {}", entry.name)))?;
        let param = model.store().get(id);
        if param.group != entry.group || param.value.shape() != entry.shape {
            return Err(DftError::contract(format!(
                "tensor {} has group {:?} shape {:?}, expected {:?} {:?}",
                entry.name,
                entry.group,
                entry.shape,
                param.group,
                param.value.shape()
            )));
        }
        let len = entry.shape[0] * entry.shape[1];
        let data = bytes[offset * 8..(offset + len) * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        *model.store_mut().value_mut(id) = Tensor::from_vec(entry.shape[0], entry.shape[1], data)?;
        offset += len;
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let cfg = ModelConfig {
            hidden: 4,
            ..ModelConfig::new(3, 2)
        };
        let model = Model::new(cfg, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&model, dir.path()).unwrap();
        let back = load_checkpoint(dir.path()).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn truncated_values_rejected() {
        let model = Model::new(
            ModelConfig {
                hidden: 2,
                ..ModelConfig::new(2, 2)
            },
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&model, dir.path()).unwrap();
        let p = dir.path().join(VALUES);
        let mut bytes = fs::read(&p).unwrap();
        bytes.truncate(bytes.len() - 8);
        fs::write(&p, bytes).unwrap();
        assert!(matches!(
            load_checkpoint(dir.path()),
            Err(DftError::Integrity { .. })
        ));
    }
}
