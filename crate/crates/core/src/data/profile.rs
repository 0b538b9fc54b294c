use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-class sample counts of a long-tailed training set together with the
/// head/tail partition.
///
/// Classes are 0-based internally and sorted by nonincreasing count, so the
/// first `head_count` classes are head classes and the rest are tail classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassProfile {
    counts: Vec<usize>,
    normalized: Vec<f64>,
    tail_fraction: f64,
    head_count: usize,
}

impl ClassProfile {
    pub fn new(counts: Vec<usize>, tail_fraction: f64) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::invalid("class profile needs at least one class"));
        }
        if counts.contains(&0) {
            return Err(Error::invalid("class counts must be positive"));
        }
        if counts.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::invalid("class counts must be nonincreasing"));
        }
        if !(0.0..=1.0).contains(&tail_fraction) {
            return Err(Error::invalid(format!(
                "tail fraction {tail_fraction} outside [0, 1]"
            )));
        }
        let normalized = normalize_profile(&counts)?;
        let head_count = head_count(counts.len(), tail_fraction);
        Ok(Self {
            counts,
            normalized,
            tail_fraction,
            head_count,
        })
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// ℓ2-normalized counts.
    pub fn normalized(&self) -> &[f64] {
        &self.normalized
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn tail_fraction(&self) -> f64 {
        self.tail_fraction
    }

    pub fn head_count(&self) -> usize {
        self.head_count
    }

    pub fn tail_count(&self) -> usize {
        self.classes() - self.head_count
    }

    pub fn is_head(&self, class: usize) -> bool {
        class < self.head_count
    }

    pub fn is_tail(&self, class: usize) -> bool {
        class >= self.head_count && class < self.classes()
    }

    pub fn head_classes(&self) -> std::ops::Range<usize> {
        0..self.head_count
    }

    pub fn tail_classes(&self) -> std::ops::Range<usize> {
        self.head_count..self.classes()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// `C - round(k·C)` with halves rounded up.
pub fn head_count(classes: usize, tail_fraction: f64) -> usize {
    let tails = (tail_fraction * classes as f64 + 0.5).floor() as usize;
    classes - tails.min(classes)
}

/// Exponentially decaying counts `floor(n_max · ρ^(-i/(C-1)))` for
/// `i = 0..C`.
pub fn longtail_counts(classes: usize, n_max: usize, imbalance: f64) -> Result<Vec<usize>> {
    if classes < 2 {
        return Err(Error::invalid(format!("need at least 2 classes, got {classes}")));
    }
    if n_max < 1 {
        return Err(Error::invalid("n_max must be at least 1"));
    }
    if !(imbalance >= 1.0 && imbalance.is_finite()) {
        return Err(Error::invalid(format!(
            "imbalance ratio must be >= 1, got {imbalance}"
        )));
    }
    let last = (classes - 1) as f64;
    Ok((0..classes)
        .map(|i| {
            let v = n_max as f64 * imbalance.powf(-(i as f64) / last);
            // Guard against pow landing a hair under an integer.
            ((v + 1e-9).floor() as usize).max(1)
        })
        .collect())
}

pub fn normalize_profile(counts: &[usize]) -> Result<Vec<f64>> {
    if counts.is_empty() {
        return Err(Error::invalid("cannot normalize an empty profile"));
    }
    let norm = counts.iter().map(|&n| (n as f64).powi(2)).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroNorm { row: 0 });
    }
    Ok(counts.iter().map(|&n| n as f64 / norm).collect())
}
