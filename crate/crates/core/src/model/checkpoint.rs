//! Checkpoints are a JSON manifest next to a flat little-endian `f64` blob.
//! The manifest lists every array in the blob with its offset (in values),
//! so the blob itself carries no framing.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ModelDims, ModelParams};
use crate::error::{Error, Result};
use crate::ndcore::{Adam, Tensor};

pub const CHECKPOINT_FORMAT: &str = "ltood-checkpoint-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub dims: ModelDims,
    pub seed: u64,
    /// Number of completed epochs.
    pub epoch: usize,
    pub adam_step: Option<u64>,
    /// File name of the blob, relative to the manifest.
    pub binary: String,
    pub layout: Vec<LayoutEntry>,
    /// Free-form training configuration snapshot.
    #[serde(default)]
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub optimizer: Option<Adam>,
    pub seed: u64,
    pub epoch: usize,
    pub config: serde_json::Value,
}

fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

/// Writes `<path>` (manifest) and `<path>.bin` (with the extension replaced).
pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let dims = *ckpt.params.dims();
    let mut layout = Vec::new();
    let mut blob: Vec<u8> = Vec::new();
    let mut offset = 0;
    let mut push = |name: String, shape: Vec<usize>, values: &[f64]| {
        layout.push(LayoutEntry {
            name,
            shape,
            offset,
        });
        offset += values.len();
        for v in values {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    };
    let names = dims.layout();
    for ((name, shape), t) in names.iter().zip(ckpt.params.tensors()) {
        push(format!("param:{name}"), shape.clone(), t.values());
    }
    if let Some(adam) = &ckpt.optimizer {
        for ((name, shape), m) in names.iter().zip(&adam.m) {
            push(format!("adam_m:{name}"), shape.clone(), m);
        }
        for ((name, shape), v) in names.iter().zip(&adam.v) {
            push(format!("adam_v:{name}"), shape.clone(), v);
        }
    }
    let bin = blob_path(path);
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        dims,
        seed: ckpt.seed,
        epoch: ckpt.epoch,
        adam_step: ckpt.optimizer.as_ref().map(|a| a.step),
        binary: bin.file_name().unwrap_or_default().to_string_lossy().into_owned(),
        layout,
        config: ckpt.config.clone(),
    };
    fs::write(&bin, blob).map_err(|e| Error::io(&bin, e))?;
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(Error::invalid(format!("unknown checkpoint format '{}'", manifest.format)));
    }
    let bin = path.with_file_name(&manifest.binary);
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::invalid("checkpoint blob length is not a multiple of 8"));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();

    let fetch = |name: &str| -> Result<Option<(Vec<usize>, Vec<f64>)>> {
        let Some(e) = manifest.layout.iter().find(|e| e.name == name) else {
            return Ok(None);
        };
        let n: usize = e.shape.iter().product();
        let slice = values
            .get(e.offset..e.offset + n)
            .ok_or_else(|| Error::invalid(format!("checkpoint entry {name} exceeds blob")))?;
        Ok(Some((e.shape.clone(), slice.to_vec())))
    };

    let names = manifest.dims.layout();
    let mut tensors = Vec::with_capacity(names.len());
    for (name, _) in &names {
        let (shape, vals) = fetch(&format!("param:{name}"))?
            .ok_or_else(|| Error::invalid(format!("checkpoint missing parameter {name}")))?;
        tensors.push(Tensor::new(shape, vals)?);
    }
    let params = ModelParams::from_tensors(manifest.dims, tensors)?;

    let optimizer = match manifest.adam_step {
        Some(step) => {
            let mut adam = Adam::new(params.tensors().iter().map(Tensor::len));
            adam.step = step;
            for (i, (name, _)) in names.iter().enumerate() {
                adam.m[i] = fetch(&format!("adam_m:{name}"))?
                    .ok_or_else(|| Error::invalid(format!("checkpoint missing moment for {name}")))?
                    .1;
                adam.v[i] = fetch(&format!("adam_v:{name}"))?
                    .ok_or_else(|| Error::invalid(format!("checkpoint missing moment for {name}")))?
                    .1;
            }
            Some(adam)
        }
        None => None,
    };

    Ok(Checkpoint {
        params,
        optimizer,
        seed: manifest.seed,
        epoch: manifest.epoch,
        config: manifest.config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let params = ModelParams::init(ModelDims::new(4, 3), 9);
        let mut adam = Adam::new(params.tensors().iter().map(Tensor::len));
        adam.step = 17;
        adam.m[2][5] = 0.125;
        adam.v[13][0] = 3e-9;
        let ckpt = Checkpoint {
            params,
            optimizer: Some(adam),
            seed: 4,
            epoch: 3,
            config: serde_json::json!({"epochs": 5}),
        };
        let p = dir.path().join("model.json");
        save_checkpoint(&p, &ckpt).unwrap();
        assert!(dir.path().join("model.bin").exists());
        assert_eq!(load_checkpoint(&p).unwrap(), ckpt);
    }

    #[test]
    fn missing_blob_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = Checkpoint {
            params: ModelParams::init(ModelDims::new(2, 2), 1),
            optimizer: None,
            seed: 0,
            epoch: 0,
            config: serde_json::Value::Null,
        };
        let p = dir.path().join("m.json");
        save_checkpoint(&p, &ckpt).unwrap();
        std::fs::remove_file(dir.path().join("m.bin")).unwrap();
        assert!(load_checkpoint(&p).is_err());
    }
}
