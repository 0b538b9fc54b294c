//! Reproducibility manifests: what was run, on which inputs, producing
//! which outputs, each identified by its SHA-256 digest.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FORMAT: &str = "ltood-manifest-v1";
pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: String,
    pub command: String,
    /// Arguments after the program name, exactly as given.
    pub argv: Vec<String>,
    /// Working directory the arguments are relative to.
    pub cwd: String,
    pub out_dir: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub seeds: Vec<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    /// Digest over the sorted input digests.
    pub input_hash: String,
    /// Output files relative to `out_dir`.
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Hash of a set of digests, independent of listing order.
pub fn combined_hash(digests: &[FileDigest]) -> String {
    let mut lines: Vec<String> = digests.iter().map(|d| format!("{} {}\n", d.sha256, d.path)).collect();
    lines.sort();
    hex::encode(Sha256::digest(lines.concat().as_bytes()))
}

/// Collects inputs and outputs while a command runs.
pub struct ManifestBuilder {
    command: String,
    argv: Vec<String>,
    out_dir: PathBuf,
    label: Option<String>,
    seeds: Vec<u64>,
    config: serde_json::Value,
    inputs: Vec<FileDigest>,
    outputs: Vec<String>,
}

impl ManifestBuilder {
    pub fn new(command: &str, argv: Vec<String>, out_dir: &Path) -> Self {
        Self {
            command: command.into(),
            argv,
            out_dir: out_dir.to_path_buf(),
            label: None,
            seeds: vec![],
            config: serde_json::Value::Null,
            inputs: vec![],
            outputs: vec![],
        }
    }

    pub fn label(&mut self, label: impl Into<String>) -> &mut Self {
        self.label = Some(label.into());
        self
    }

    pub fn seeds(&mut self, seeds: Vec<u64>) -> &mut Self {
        self.seeds = seeds;
        self
    }

    pub fn config(&mut self, config: serde_json::Value) -> &mut Self {
        self.config = config;
        self
    }

    pub fn input(&mut self, path: &Path) -> anyhow::Result<&mut Self> {
        let sha256 = sha256_file(path)?;
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256,
        });
        Ok(self)
    }

    /// Records a file already written under the output directory.
    pub fn output(&mut self, relative: impl Into<String>) -> &mut Self {
        self.outputs.push(relative.into());
        self
    }

    pub fn write(self) -> anyhow::Result<Manifest> {
        let outputs = self
            .outputs
            .iter()
            .map(|rel| {
                Ok(FileDigest {
                    path: rel.clone(),
                    sha256: sha256_file(&self.out_dir.join(rel))?,
                })
            })
            .collect::<anyhow::Result<Vec<_>>>()?;
        let cwd = std::env::current_dir().context("reading working directory")?;
        let manifest = Manifest {
            format: MANIFEST_FORMAT.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: self.command,
            argv: self.argv,
            cwd: cwd.display().to_string(),
            out_dir: self.out_dir.display().to_string(),
            label: self.label,
            seeds: self.seeds,
            config: self.config,
            input_hash: combined_hash(&self.inputs),
            inputs: self.inputs,
            outputs,
        };
        let path = self.out_dir.join(MANIFEST_NAME);
        fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(manifest)
    }
}

pub fn load_manifest(path: &Path) -> anyhow::Result<Manifest> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let m: Manifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    anyhow::ensure!(m.format == MANIFEST_FORMAT, "unknown manifest format '{}'", m.format);
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("abc.txt");
        fs::write(&p, "abc").unwrap();
        assert_eq!(
            sha256_file(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn combined_hash_ignores_order() {
        let a = FileDigest {
            path: "a".into(),
            sha256: "01".into(),
        };
        let b = FileDigest {
            path: "b".into(),
            sha256: "02".into(),
        };
        assert_eq!(combined_hash(&[a.clone(), b.clone()]), combined_hash(&[b, a]));
    }

    #[test]
    fn builder_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("x.csv"), "1,2\n").unwrap();
        let mut b = ManifestBuilder::new("plot", vec!["plot".into()], dir.path());
        b.output("x.csv").label("demo").seeds(vec![3]);
        let m = b.write().unwrap();
        assert_eq!(load_manifest(&dir.path().join(MANIFEST_NAME)).unwrap(), m);
        assert_eq!(m.outputs.len(), 1);
        assert_eq!(m.label.as_deref(), Some("demo"));
    }
}
