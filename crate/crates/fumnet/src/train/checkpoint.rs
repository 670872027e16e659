//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   8 bytes  "FUMNETCK"
//! version u32      currently 1
//! config  u64 len + TOML text (the ModelConfig snapshot)
//! count   u64      number of parameter records
//! record  u64 len + utf8 name
//!         u32 rank + u64 dims…
//!         f32 data…
//! ```
//!
//! Records cover every store slot, trainable parameters and buffers
//! alike, so a reloaded model evaluates bit-identically.

use std::fs;
use std::path::{Path, PathBuf};

use crate::model::{FumModel, ModelConfig};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"FUMNETCK";
const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("cannot access checkpoint {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic bytes: not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
    #[error("malformed config snapshot: {0}")]
    BadConfig(String),
    #[error("checkpoint parameter {0} does not exist in the target model")]
    UnknownParam(String),
    #[error("model parameter {0} missing from the checkpoint")]
    MissingParam(String),
    #[error("shape mismatch for {name}: checkpoint {found:?} vs model {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

pub fn save_checkpoint(path: &Path, model: &FumModel<f32>) -> Result<(), CheckpointError> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    let config =
        toml::to_string(&model.config).map_err(|e| CheckpointError::BadConfig(e.to_string()))?;
    bytes.extend_from_slice(&(config.len() as u64).to_le_bytes());
    bytes.extend_from_slice(config.as_bytes());

    let ids: Vec<_> = model.store.ids().collect();
    bytes.extend_from_slice(&(ids.len() as u64).to_le_bytes());
    for id in ids {
        let name = model.store.name(id);
        let tensor = model.store.get(id);
        bytes.extend_from_slice(&(name.len() as u64).to_le_bytes());
        bytes.extend_from_slice(name.as_bytes());
        bytes.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
        for &dim in tensor.shape() {
            bytes.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        for &v in tensor.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Truncated(self.pos));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Reads the config snapshot and every parameter record.
pub fn load_checkpoint(
    path: &Path,
) -> Result<(ModelConfig, Vec<(String, Tensor<f32>)>), CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
    };
    if r.take(8)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let config_len = r.u64()? as usize;
    let config_text = std::str::from_utf8(r.take(config_len)?)
        .map_err(|e| CheckpointError::BadConfig(e.to_string()))?;
    let config: ModelConfig =
        toml::from_str(config_text).map_err(|e| CheckpointError::BadConfig(e.to_string()))?;

    let count = r.u64()? as usize;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u64()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|e| CheckpointError::BadConfig(e.to_string()))?
            .to_string();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let tensor = Tensor::new(shape, data).expect("shape/data read together");
        params.push((name, tensor));
    }
    Ok((config, params))
}

/// Copies checkpoint records into an existing model. Every record must
/// match a slot by name and shape, and every slot must be covered.
pub fn apply_checkpoint(
    model: &mut FumModel<f32>,
    params: Vec<(String, Tensor<f32>)>,
) -> Result<(), CheckpointError> {
    let mut seen = vec![false; model.store.len()];
    for (name, tensor) in params {
        let id = model
            .store
            .find(&name)
            .ok_or_else(|| CheckpointError::UnknownParam(name.clone()))?;
        let expected = model.store.get(id).shape().to_vec();
        if expected != tensor.shape() {
            return Err(CheckpointError::ShapeMismatch {
                name,
                expected,
                found: tensor.shape().to_vec(),
            });
        }
        model.store.set(id, tensor);
        seen[model.store.ids().position(|i| i == id).expect("id exists")] = true;
    }
    for (i, covered) in seen.iter().enumerate() {
        if !covered {
            let id = model.store.ids().nth(i).expect("index in range");
            return Err(CheckpointError::MissingParam(
                model.store.name(id).to_string(),
            ));
        }
    }
    Ok(())
}

/// Rebuilds a model from a checkpoint using its embedded config.
pub fn model_from_checkpoint(path: &Path) -> Result<FumModel<f32>, CheckpointError> {
    let (config, params) = load_checkpoint(path)?;
    let mut model =
        FumModel::new(config, 0).map_err(|e| CheckpointError::BadConfig(e.to_string()))?;
    apply_checkpoint(&mut model, params)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, Variant};
    use crate::nn::Mode;
    use crate::tensor::Tape;

    fn tiny_model(seed: u64) -> FumModel<f32> {
        FumModel::new(ModelConfig::tiny(), seed).unwrap()
    }

    fn forward_fingerprint(model: &FumModel<f32>) -> Vec<u32> {
        let tape = Tape::new();
        let frame = model.store.lease(&tape);
        let mut img = Tensor::zeros(&[3, 3, 84, 84]);
        for (i, v) in img.data_mut().iter_mut().enumerate() {
            *v = ((i % 251) as f32) / 251.0;
        }
        let images = tape.input(&img, false);
        let mut updates = Vec::new();
        let scores = model
            .episode_scores(&frame, images, 2, 1, 1, Mode::Eval, &mut updates)
            .unwrap();
        scores.value().data().iter().map(|v| v.to_bits()).collect()
    }

    #[test]
    fn roundtrip_reproduces_forward_outputs_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = tiny_model(21);
        save_checkpoint(&path, &model).unwrap();
        let restored = model_from_checkpoint(&path).unwrap();
        assert_eq!(forward_fingerprint(&model), forward_fingerprint(&restored));
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &tiny_model(3)).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] ^= 0xff;
        fs::write(&path, bytes).unwrap();
        assert!(matches!(
            model_from_checkpoint(&path),
            Err(CheckpointError::BadMagic)
        ));
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &tiny_model(4)).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(
            model_from_checkpoint(&path),
            Err(CheckpointError::Truncated(_))
        ));
    }

    #[test]
    fn wrong_way_count_is_a_shape_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &tiny_model(5)).unwrap();
        let (_, params) = load_checkpoint(&path).unwrap();
        let mut wider = ModelConfig::tiny();
        wider.n_way = 4;
        let mut target = FumModel::new(wider, 0).unwrap();
        let err = apply_checkpoint(&mut target, params).unwrap_err();
        assert!(matches!(err, CheckpointError::ShapeMismatch { .. }), "{err}");
    }

    #[test]
    fn unsupported_version_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &tiny_model(6)).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[8] = 99;
        fs::write(&path, bytes).unwrap();
        assert!(matches!(
            model_from_checkpoint(&path),
            Err(CheckpointError::UnsupportedVersion(99))
        ));
    }

    #[test]
    fn config_snapshot_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut config = ModelConfig::tiny();
        config.variant = Variant::UpdateOnly;
        config.filter_sizes = vec![2, 3];
        let model = FumModel::new(config.clone(), 8).unwrap();
        save_checkpoint(&path, &model).unwrap();
        let (loaded, _) = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, config);
    }
}
