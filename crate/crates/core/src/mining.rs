//! Informative outlier mining: score candidate outliers by how much
//! probability mass the classifier leaves outside the head classes, then split
//! them into tail-like, neutral and head-like thirds.

use serde::{Deserialize, Serialize};

use crate::data::ClassProfile;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::ndcore::tensor::log_softmax;
use crate::ndcore::Tensor;

/// Which reading of the outlier score to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreForm {
    /// `1 − Σ_{head n} log softmax_C(f)_n`
    #[default]
    HeadLogProb,
    /// `1 − Σ_{tail n} softmax_C(f)_n`
    TailMass,
}

impl std::str::FromStr for ScoreForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "head-log-prob" => Ok(ScoreForm::HeadLogProb),
            "tail-mass" => Ok(ScoreForm::TailMass),
            other => Err(Error::invalid(format!("unknown score form '{other}'"))),
        }
    }
}

/// Score of one logit row. Only the first `classes` entries are used, so the
/// row may include the outlier logit.
pub fn outlier_score(logits: &[f64], classes: usize, head: usize, form: ScoreForm) -> Result<f64> {
    if classes == 0 || logits.len() < classes {
        return Err(Error::invalid(format!(
            "need at least {classes} logits, got {}",
            logits.len()
        )));
    }
    if head > classes {
        return Err(Error::invalid(format!("head count {head} exceeds {classes} classes")));
    }
    let id = Tensor::matrix(1, classes, logits[..classes].to_vec())?;
    let lp = log_softmax(&id);
    let lp = lp.values();
    Ok(match form {
        ScoreForm::HeadLogProb => 1.0 - lp[..head].iter().sum::<f64>(),
        ScoreForm::TailMass => 1.0 - lp[head..].iter().map(|v| v.exp()).sum::<f64>(),
    })
}

/// Scores every row of a `[M x (C or C+1)]` logit matrix.
pub fn outlier_scores(logits: &Tensor, classes: usize, head: usize, form: ScoreForm) -> Result<Vec<f64>> {
    (0..logits.rows())
        .map(|r| outlier_score(logits.row(r), classes, head, form))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinedPartition {
    pub tail_like: Vec<usize>,
    pub neutral: Vec<usize>,
    pub head_like: Vec<usize>,
    pub scores: Vec<f64>,
}

impl MinedPartition {
    /// Sorts by score descending (ties by index) and cuts into thirds.
    pub fn from_scores(scores: Vec<f64>) -> Result<Self> {
        let n = scores.len();
        if n == 0 || !n.is_multiple_of(3) {
            return Err(Error::invalid(format!(
                "candidate count {n} must be a positive multiple of 3"
            )));
        }
        if let Some(i) = scores.iter().position(|s| s.is_nan()) {
            return Err(Error::NonFinite {
                index: i,
                context: "outlier score".into(),
            });
        }
        let mut order: Vec<usize> = (0..n).collect();
        // sort_by is stable, so equal scores keep index order
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
        let b = n / 3;
        Ok(Self {
            tail_like: order[..b].to_vec(),
            neutral: order[b..2 * b].to_vec(),
            head_like: order[2 * b..].to_vec(),
            scores,
        })
    }

    pub fn batch(&self) -> usize {
        self.tail_like.len()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Scores `candidates` (rows of features) with the model and partitions them.
pub fn mine(candidates: &Tensor, params: &ModelParams, profile: &ClassProfile, form: ScoreForm) -> Result<MinedPartition> {
    if !candidates.rows().is_multiple_of(3) || candidates.is_empty() {
        return Err(Error::invalid(format!(
            "candidate count {} must be a positive multiple of 3",
            candidates.rows()
        )));
    }
    let logits = params.logits(candidates)?;
    let scores = outlier_scores(&logits, profile.classes(), profile.head_count(), form)?;
    MinedPartition::from_scores(scores)
}
