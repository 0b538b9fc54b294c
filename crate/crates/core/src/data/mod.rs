//! Long-tailed class profiles, synthetic generators and tabular IO.

mod csvio;
mod profile;
mod synth;

use serde::{Deserialize, Serialize};

pub use csvio::{load_csv, save_dataset_csv, save_pool_csv, Loaded};
pub use profile::{head_count, longtail_counts, normalize_profile, ClassProfile};
pub use synth::{
    synth_id, synth_outliers, Benchmark, BenchmarkConfig, ClusterSpec, OutlierKind, OutlierParams,
};

use crate::error::{Error, Result};
use crate::ndcore::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Feature rows with 0-based class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Tensor,
    labels: Vec<usize>,
    classes: usize,
    split: Split,
}

impl LabeledDataset {
    pub fn new(features: Tensor, labels: Vec<usize>, classes: usize, split: Split) -> Result<Self> {
        if features.rows() != labels.len() && !(labels.is_empty() && features.is_empty()) {
            return Err(Error::invalid(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange {
                label: bad + 1,
                classes,
            });
        }
        Ok(Self {
            features,
            labels,
            classes,
            split,
        })
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn subset(&self, idx: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            split: self.split,
        }
    }
}

/// Where an outlier pool came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolSource {
    pub generator: String,
    pub seed: Option<u64>,
}

/// Unlabeled feature rows used as auxiliary outliers or as an OOD test set.
#[derive(Debug, Clone, PartialEq)]
pub struct OutlierPool {
    features: Tensor,
    source: PoolSource,
}

impl OutlierPool {
    pub fn new(features: Tensor, source: PoolSource) -> Self {
        Self { features, source }
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn source(&self) -> &PoolSource {
        &self.source
    }

    pub fn len(&self) -> usize {
        if self.features.is_empty() {
            0
        } else {
            self.features.rows()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn subset(&self, idx: &[usize]) -> OutlierPool {
        OutlierPool {
            features: self.features.select_rows(idx),
            source: self.source.clone(),
        }
    }

    /// Row-wise concatenation; the result is tagged with `source`.
    pub fn concat(pools: &[OutlierPool], source: PoolSource) -> Result<OutlierPool> {
        let dim = pools.first().map_or(0, OutlierPool::dim);
        let mut values = Vec::new();
        let mut rows = 0;
        for p in pools {
            if p.dim() != dim {
                return Err(Error::ShapeMismatch {
                    op: "pool concat",
                    lhs: vec![dim],
                    rhs: vec![p.dim()],
                });
            }
            rows += p.len();
            values.extend_from_slice(p.features.values());
        }
        Ok(OutlierPool {
            features: Tensor::new(vec![rows, dim], values)?,
            source,
        })
    }
}
