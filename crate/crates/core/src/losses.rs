//! Outlier-class cross-entropy, the tail-class contrastive loss with
//! adaptive temperatures, the outlier-prototype head-class loss, and their
//! weighted sum. All losses are built on a [`Tape`] and return scalar nodes.

use serde::{Deserialize, Serialize};

use crate::data::ClassProfile;
use crate::error::{Error, Result};
use crate::ndcore::{Tape, Tensor, Var};

/// Per-class temperatures for the current epoch plus the static base
/// temperature used for every similarity involving outliers or the outlier
/// prototype.
#[derive(Debug, Clone, PartialEq)]
pub struct Temperatures {
    pub per_class: Vec<f64>,
    pub base: f64,
}

impl Temperatures {
    pub fn constant(classes: usize, tau: f64) -> Self {
        Self {
            per_class: vec![tau; classes],
            base: tau,
        }
    }

    fn validate(&self) -> Result<()> {
        if let Some(t) = self.per_class.iter().chain([&self.base]).find(|&&t| !(t > 0.0)) {
            return Err(Error::invalid(format!("temperature must be positive, got {t}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            beta: 0.05,
            gamma: 0.1,
        }
    }
}

fn zero(tape: &mut Tape) -> Var {
    tape.leaf(Tensor::scalar(0.0))
}

fn neg_mean_picked(tape: &mut Tape, logits: Var, cols: &[usize]) -> Result<Var> {
    let lp = tape.log_softmax(logits)?;
    let picked = tape.pick(lp, cols)?;
    let m = tape.mean(picked);
    Ok(tape.scale(m, -1.0))
}

/// Mean cross-entropy of ID samples at their labels plus `alpha` times the
/// mean cross-entropy of outliers at the outlier class (the last column).
///
/// Returns `(total, id_term)`.
pub fn ocl_loss(
    tape: &mut Tape,
    id_logits: Var,
    labels: &[usize],
    outlier_logits: Option<Var>,
    alpha: f64,
) -> Result<(Var, Var)> {
    let outputs = tape.value(id_logits).cols();
    let classes = outputs - 1;
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange {
            label: bad + 1,
            classes,
        });
    }
    if !(alpha >= 0.0) {
        return Err(Error::invalid(format!("alpha must be >= 0, got {alpha}")));
    }
    let id_term = if labels.is_empty() {
        zero(tape)
    } else {
        neg_mean_picked(tape, id_logits, labels)?
    };
    let total = match outlier_logits {
        Some(ol) if alpha > 0.0 && tape.value(ol).rows() > 0 && !tape.value(ol).is_empty() => {
            let rows = tape.value(ol).rows();
            let out_term = neg_mean_picked(tape, ol, &vec![classes; rows])?;
            let scaled = tape.scale(out_term, alpha);
            tape.add(id_term, scaled)?
        }
        _ => id_term,
    };
    Ok((total, id_term))
}

/// Tail-class supervised contrastive loss with class-wise temperatures.
///
/// Anchors are the tail samples of the batch followed (when given) by the
/// tail prototypes, one per tail class in class order. An anchor of class `c`
/// has as positives the other batch samples of class `c`; its denominator
/// runs over every tail sample except itself at temperature `τ̂_c` and every
/// outlier at the base temperature. Anchors without positives contribute 0
/// but still count towards the mean.
pub fn atscl_loss(
    tape: &mut Tape,
    id_embeddings: Var,
    labels: &[usize],
    outlier_embeddings: Option<Var>,
    tail_prototypes: Option<Var>,
    profile: &ClassProfile,
    temps: &Temperatures,
) -> Result<Var> {
    temps.validate()?;
    let tail_idx: Vec<usize> = (0..labels.len()).filter(|&i| profile.is_tail(labels[i])).collect();
    let tail_labels: Vec<usize> = tail_idx.iter().map(|&i| labels[i]).collect();
    let proto_labels: Vec<usize> = match tail_prototypes {
        Some(p) => {
            let rows = tape.value(p).rows();
            if rows != profile.tail_count() {
                return Err(Error::invalid(format!(
                    "{rows} tail prototypes for {} tail classes",
                    profile.tail_count()
                )));
            }
            profile.tail_classes().collect()
        }
        None => vec![],
    };
    let anchor_count = tail_idx.len() + proto_labels.len();
    if anchor_count == 0 {
        return Err(Error::invalid("tail loss needs at least one tail sample or prototype"));
    }
    if tail_idx.is_empty() {
        // No tail samples means no anchor has a positive.
        return Ok(zero(tape));
    }

    let zt = tape.gather_rows(id_embeddings, &tail_idx)?;
    let outliers = outlier_embeddings.filter(|&o| !tape.value(o).is_empty());
    let n_out = outliers.map_or(0, |o| tape.value(o).rows());
    let candidates = match outliers {
        Some(o) => tape.concat_rows(zt, o)?,
        None => zt,
    };
    let anchors = match tail_prototypes {
        Some(p) => tape.concat_rows(zt, p)?,
        None => zt,
    };
    let n_tail = tail_idx.len();
    let cols = n_tail + n_out;

    let anchor_labels: Vec<usize> = tail_labels.iter().chain(&proto_labels).copied().collect();
    let mut inv_temp = Vec::with_capacity(anchor_count * cols);
    let mut mask = Vec::with_capacity(anchor_count * cols);
    let mut pos_weight = Vec::with_capacity(anchor_count * cols);
    let mut has_pos = Vec::with_capacity(anchor_count);
    for (a, &c) in anchor_labels.iter().enumerate() {
        let is_sample = a < n_tail;
        let positives = (0..n_tail)
            .filter(|&j| tail_labels[j] == c && !(is_sample && j == a))
            .count();
        has_pos.push(if positives > 0 { 1.0 } else { 0.0 });
        for j in 0..cols {
            if j < n_tail {
                inv_temp.push(1.0 / temps.per_class[c]);
                let own = is_sample && j == a;
                mask.push(!own);
                let pos = !own && tail_labels[j] == c;
                pos_weight.push(if pos { 1.0 / positives as f64 } else { 0.0 });
            } else {
                inv_temp.push(1.0 / temps.base);
                mask.push(true);
                pos_weight.push(0.0);
            }
        }
    }

    let kt = tape.transpose(candidates)?;
    let sim = tape.matmul(anchors, kt)?;
    let it = tape.leaf(Tensor::matrix(anchor_count, cols, inv_temp)?);
    let logits = tape.mul(sim, it)?;
    let lse = tape.masked_logsumexp(logits, &mask)?;
    let hp = tape.leaf(Tensor::matrix(anchor_count, 1, has_pos)?);
    let lse_used = tape.mul(lse, hp)?;
    let denom = tape.sum(lse_used);
    let pw = tape.leaf(Tensor::matrix(anchor_count, cols, pos_weight)?);
    let pos = tape.mul(logits, pw)?;
    let numer = tape.sum(pos);
    let diff = tape.sub(denom, numer)?;
    Ok(tape.scale(diff, 1.0 / anchor_count as f64))
}

/// Head-class loss anchored at outliers: each outlier is pulled towards the
/// outlier prototype (base temperature) and pushed from every head sample of
/// the batch at that sample's class temperature.
pub fn aohl_loss(
    tape: &mut Tape,
    id_embeddings: Var,
    labels: &[usize],
    outlier_embeddings: Var,
    outlier_prototype: Var,
    profile: &ClassProfile,
    temps: &Temperatures,
) -> Result<Var> {
    temps.validate()?;
    let out = tape.value(outlier_embeddings);
    if out.is_empty() || out.rows() == 0 {
        return Err(Error::invalid("head loss needs a nonempty outlier batch"));
    }
    let n_out = out.rows();
    let head_idx: Vec<usize> = (0..labels.len()).filter(|&i| profile.is_head(labels[i])).collect();
    let candidates = if head_idx.is_empty() {
        outlier_prototype
    } else {
        let zh = tape.gather_rows(id_embeddings, &head_idx)?;
        tape.concat_rows(zh, outlier_prototype)?
    };
    let cols = head_idx.len() + 1;
    let row_temps: Vec<f64> = head_idx
        .iter()
        .map(|&i| 1.0 / temps.per_class[labels[i]])
        .chain([1.0 / temps.base])
        .collect();
    let inv_temp: Vec<f64> = (0..n_out).flat_map(|_| row_temps.iter().copied()).collect();

    let kt = tape.transpose(candidates)?;
    let sim = tape.matmul(outlier_embeddings, kt)?;
    let it = tape.leaf(Tensor::matrix(n_out, cols, inv_temp)?);
    let logits = tape.mul(sim, it)?;
    let lse = tape.masked_logsumexp(logits, &vec![true; n_out * cols])?;
    let proto = tape.pick(logits, &vec![cols - 1; n_out])?;
    let per = tape.sub(lse, proto)?;
    Ok(tape.mean(per))
}

/// Scalar values of each term, for logging.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ocl: f64,
    pub tail: f64,
    pub head: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// All-NaN breakdown for a step whose forward pass overflowed.
    pub fn diverged() -> Self {
        Self {
            ocl: f64::NAN,
            tail: f64::NAN,
            head: f64::NAN,
            total: f64::NAN,
        }
    }
}

/// Everything the combined objective needs, already recorded on a tape.
#[derive(Debug, Clone)]
pub struct LossInputs<'a> {
    pub id_logits: Var,
    pub id_embeddings: Var,
    pub labels: &'a [usize],
    pub outlier_logits: Option<Var>,
    pub outlier_embeddings: Option<Var>,
    pub tail_prototypes: Option<Var>,
    pub outlier_prototype: Option<Var>,
    pub profile: &'a ClassProfile,
    pub temps: &'a Temperatures,
}

/// `L_OCL + β·L_tail + γ·L_head`.
///
/// A term is left out of the graph when its weight is zero or its anchor set
/// is empty (no tail classes for the tail term, no outliers for the head
/// term); its breakdown entry is then 0.
pub fn rscl_loss(tape: &mut Tape, inputs: &LossInputs<'_>, weights: &LossWeights) -> Result<(Var, LossBreakdown)> {
    if !(weights.beta >= 0.0 && weights.gamma >= 0.0) {
        return Err(Error::invalid("loss weights must be nonnegative"));
    }
    let (ocl, _) = ocl_loss(tape, inputs.id_logits, inputs.labels, inputs.outlier_logits, weights.alpha)?;
    let mut breakdown = LossBreakdown {
        ocl: tape.value(ocl).item(),
        ..LossBreakdown::default()
    };
    let mut total = ocl;

    if weights.beta > 0.0 && inputs.profile.tail_count() > 0 {
        let tail = atscl_loss(
            tape,
            inputs.id_embeddings,
            inputs.labels,
            inputs.outlier_embeddings,
            inputs.tail_prototypes,
            inputs.profile,
            inputs.temps,
        )?;
        breakdown.tail = tape.value(tail).item();
        let scaled = tape.scale(tail, weights.beta);
        total = tape.add(total, scaled)?;
    }

    let outliers = inputs.outlier_embeddings.filter(|&o| !tape.value(o).is_empty());
    if let (true, Some(out), Some(proto)) = (weights.gamma > 0.0, outliers, inputs.outlier_prototype) {
        let head = aohl_loss(tape, inputs.id_embeddings, inputs.labels, out, proto, inputs.profile, inputs.temps)?;
        breakdown.head = tape.value(head).item();
        let scaled = tape.scale(head, weights.gamma);
        total = tape.add(total, scaled)?;
    }

    breakdown.total = tape.value(total).item();
    Ok((total, breakdown))
}
