use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use ltood_core::data::{load_csv, Split};
use ltood_core::model::{load_checkpoint, Checkpoint};
use ltood_core::{ClassProfile, LabeledDataset, OutlierPool, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult};

pub fn ensure_dir(path: &Path) -> CliResult {
    fs::create_dir_all(path)
        .with_context(|| format!("creating output directory {}", path.display()))
        .map_err(CliError::Runtime)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(CliError::Runtime)
}

pub fn write_text(path: &Path, text: &str) -> CliResult {
    fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(CliError::Runtime)
}

fn require(path: &Path) -> CliResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::usage(format!("input file {} does not exist", path.display())))
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    require(path)?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

pub fn load_labeled(path: &Path, classes: Option<usize>, split: Split) -> CliResult<LabeledDataset> {
    require(path)?;
    Ok(load_csv(path, classes, split)?.into_labeled()?)
}

pub fn load_pool(path: &Path) -> CliResult<OutlierPool> {
    require(path)?;
    Ok(load_csv(path, None, Split::Test)?.into_pool()?)
}

/// `ood_*.csv` files of a benchmark directory in name order.
pub fn ood_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("ood_") && n.ends_with(".csv"))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Display name of an OOD pool file: the stem without an `ood_` prefix.
pub fn pool_name(path: &Path) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("pool");
    stem.strip_prefix("ood_").unwrap_or(stem).to_string()
}

/// What a checkpoint needs besides its weights to be evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub train: TrainConfig,
    pub class_counts: Vec<usize>,
}

impl ModelMeta {
    pub fn profile(&self, k: Option<f64>) -> CliResult<ClassProfile> {
        Ok(ClassProfile::new(self.class_counts.clone(), k.unwrap_or(self.train.k))?)
    }
}

pub fn load_model(path: &Path) -> CliResult<(Checkpoint, ModelMeta)> {
    require(path)?;
    let ckpt = load_checkpoint(path).map_err(|e| CliError::Runtime(e.into()))?;
    let meta: ModelMeta = serde_json::from_value(ckpt.config.clone())
        .map_err(|e| CliError::usage(format!("{}: checkpoint lacks training metadata: {e}", path.display())))?;
    Ok((ckpt, meta))
}

/// Path of `file` relative to `base` when it lies underneath, for manifests.
pub fn relative(base: &Path, file: &Path) -> String {
    file.strip_prefix(base).unwrap_or(file).display().to_string()
}
