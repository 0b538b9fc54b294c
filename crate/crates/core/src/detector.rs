//! Thresholded OOD detection on the outlier-class probability, and the
//! ranking metrics used to evaluate it.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{ClassProfile, LabeledDataset};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::ndcore::tensor::log_softmax;
use crate::ndcore::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    /// Softmax probability of the outlier class over all C+1 logits.
    pub ood_score: f64,
    /// Arg-max over the ID classes, 0-based.
    pub predicted: usize,
}

/// Scores one `[M x (C+1)]` logit matrix.
pub fn score_logits(logits: &Tensor) -> Result<Vec<ScoredSample>> {
    let outputs = logits.cols();
    if outputs < 2 {
        return Err(Error::invalid(format!("need at least 2 logit columns, got {outputs}")));
    }
    let lp = log_softmax(logits);
    Ok((0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0;
            for (c, &v) in row[..outputs - 1].iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            ScoredSample {
                ood_score: lp.row(r)[outputs - 1].exp(),
                predicted: best,
            }
        })
        .collect())
}

pub fn score(params: &ModelParams, features: &Tensor) -> Result<Vec<ScoredSample>> {
    score_logits(&params.logits(features)?)
}

fn check_scores(scores: &[f64], what: &str) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::invalid(format!("{what} score list is empty")));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite {
            index: i,
            context: format!("{what} score"),
        });
    }
    Ok(())
}

fn sorted(scores: &[f64]) -> Vec<f64> {
    let mut s = scores.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Largest `η` such that at least `target` of the OOD scores are `≥ η`.
pub fn threshold_at_tpr(ood: &[f64], target: f64) -> Result<f64> {
    check_scores(ood, "OOD")?;
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::invalid(format!("target TPR must lie in (0, 1], got {target}")));
    }
    let s = sorted(ood);
    let m = s.len();
    // Walk from the top; `i` is the first index holding value s[i], so
    // exactly m - i scores are >= s[i].
    let mut i = m;
    while i > 0 {
        i -= 1;
        while i > 0 && s[i - 1] == s[i] {
            i -= 1;
        }
        if (m - i) as f64 >= target * m as f64 {
            return Ok(s[i]);
        }
    }
    Ok(s[0])
}

/// Fraction of ID scores flagged as OOD at threshold `eta`.
pub fn fpr_at(eta: f64, id: &[f64]) -> Result<f64> {
    check_scores(id, "ID")?;
    Ok(id.iter().filter(|&&s| s >= eta).count() as f64 / id.len() as f64)
}

/// Probability that a random OOD score exceeds a random ID score, ties
/// counting one half, computed from rank sums.
pub fn auroc(id: &[f64], ood: &[f64]) -> Result<f64> {
    check_scores(id, "ID")?;
    check_scores(ood, "OOD")?;
    let mut all: Vec<(f64, bool)> = id.iter().map(|&s| (s, false)).chain(ood.iter().map(|&s| (s, true))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // average 1-based rank of the tie group
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * all[i..=j].iter().filter(|x| x.1).count() as f64;
        i = j + 1;
    }
    let (n, m) = (id.len() as f64, ood.len() as f64);
    Ok((rank_sum - m * (m + 1.0) / 2.0) / (n * m))
}

/// Average precision with OOD as the positive class: the sum, over distinct
/// thresholds in descending order, of the recall increment times the
/// precision at that threshold.
pub fn aupr(id: &[f64], ood: &[f64]) -> Result<f64> {
    check_scores(id, "ID")?;
    check_scores(ood, "OOD")?;
    let mut all: Vec<(f64, bool)> = id.iter().map(|&s| (s, false)).chain(ood.iter().map(|&s| (s, true))).collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let m = ood.len() as f64;
    let (mut tp, mut seen, mut ap) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        let mut new_tp = 0;
        while j < all.len() && all[j].0 == all[i].0 {
            new_tp += all[j].1 as usize;
            j += 1;
        }
        tp += new_tp;
        seen += j - i;
        if new_tp > 0 {
            ap += (new_tp as f64 / m) * (tp as f64 / seen as f64);
        }
        i = j;
    }
    Ok(ap)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub acc: f64,
    pub head_acc: Option<f64>,
    pub tail_acc: Option<f64>,
    pub head_count: usize,
    pub tail_count: usize,
}

/// Accuracy of `predicted` against ID `labels`, overall and split by the
/// head/tail ranges of `profile`.
pub fn classification_report(predicted: &[usize], labels: &[usize], profile: &ClassProfile) -> Result<ClassificationReport> {
    if predicted.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} labels",
            predicted.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::invalid("no ID samples to classify"));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= profile.classes()) {
        // anything past the ID classes is an OOD marker
        return Err(Error::LabelOutOfRange {
            label: bad + 1,
            classes: profile.classes(),
        });
    }
    let (mut hc, mut hn, mut tc, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &l) in predicted.iter().zip(labels) {
        let hit = (p == l) as usize;
        if profile.is_head(l) {
            hc += hit;
            hn += 1;
        } else {
            tc += hit;
            tn += 1;
        }
    }
    let frac = |c: usize, n: usize| (n > 0).then(|| c as f64 / n as f64);
    Ok(ClassificationReport {
        acc: (hc + tc) as f64 / labels.len() as f64,
        head_acc: frac(hc, hn),
        tail_acc: frac(tc, tn),
        head_count: hn,
        tail_count: tn,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolMetrics {
    pub pool: String,
    pub auroc: f64,
    pub aupr: f64,
    pub fpr95: f64,
    pub threshold: f64,
    pub id_count: usize,
    pub ood_count: usize,
}

impl PoolMetrics {
    pub fn compute(pool: impl Into<String>, id: &[f64], ood: &[f64]) -> Result<Self> {
        let threshold = threshold_at_tpr(ood, 0.95)?;
        Ok(Self {
            pool: pool.into(),
            auroc: auroc(id, ood)?,
            aupr: aupr(id, ood)?,
            fpr95: fpr_at(threshold, id)?,
            threshold,
            id_count: id.len(),
            ood_count: ood.len(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AverageMetrics {
    pub auroc: f64,
    pub aupr: f64,
    pub fpr95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub pools: Vec<PoolMetrics>,
    /// Equal-weight mean over pools.
    pub average: AverageMetrics,
    pub classification: ClassificationReport,
}

impl MetricsReport {
    pub fn new(pools: Vec<PoolMetrics>, classification: ClassificationReport) -> Result<Self> {
        if pools.is_empty() {
            return Err(Error::invalid("at least one OOD test pool is required"));
        }
        let n = pools.len() as f64;
        let mean = |f: fn(&PoolMetrics) -> f64| pools.iter().map(f).sum::<f64>() / n;
        let average = AverageMetrics {
            auroc: mean(|p| p.auroc),
            aupr: mean(|p| p.aupr),
            fpr95: mean(|p| p.fpr95),
        };
        Ok(Self {
            pools,
            average,
            classification,
        })
    }

    /// Aligned text table, one row per pool plus the average, in percent.
    pub fn to_table(&self) -> String {
        let width = self.pools.iter().map(|p| p.pool.len()).max().unwrap_or(0).max(7);
        let mut s = String::new();
        let _ = writeln!(s, "{:<width$}  {:>7}  {:>7}  {:>7}  {:>7}", "pool", "AUROC↑", "AUPR↑", "FPR95↓", "ACC↑");
        let acc = 100.0 * self.classification.acc;
        for p in &self.pools {
            let _ = writeln!(
                s,
                "{:<width$}  {:>7.2}  {:>7.2}  {:>7.2}  {:>7.2}",
                p.pool,
                100.0 * p.auroc,
                100.0 * p.aupr,
                100.0 * p.fpr95,
                acc
            );
        }
        let a = &self.average;
        let _ = writeln!(
            s,
            "{:<width$}  {:>7.2}  {:>7.2}  {:>7.2}  {:>7.2}",
            "Average",
            100.0 * a.auroc,
            100.0 * a.aupr,
            100.0 * a.fpr95,
            acc
        );
        let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{:.2}", 100.0 * v));
        let _ = writeln!(
            s,
            "head acc {}  tail acc {}",
            pct(self.classification.head_acc),
            pct(self.classification.tail_acc)
        );
        s
    }
}

/// Scores the ID test set and every OOD pool with `params` and assembles the
/// full report.
pub fn evaluate(
    params: &ModelParams,
    test: &LabeledDataset,
    pools: &[(String, &Tensor)],
    profile: &ClassProfile,
) -> Result<MetricsReport> {
    let scored = score(params, test.features())?;
    let id: Vec<f64> = scored.iter().map(|s| s.ood_score).collect();
    let predicted: Vec<usize> = scored.iter().map(|s| s.predicted).collect();
    let classification = classification_report(&predicted, test.labels(), profile)?;
    let per_pool = pools
        .iter()
        .map(|(name, x)| {
            let ood: Vec<f64> = score(params, x)?.iter().map(|s| s.ood_score).collect();
            PoolMetrics::compute(name.clone(), &id, &ood)
        })
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::new(per_pool, classification)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;
    use rand::Rng;

    fn brute_auroc(id: &[f64], ood: &[f64]) -> f64 {
        let mut s = 0.0;
        for &o in ood {
            for &i in id {
                s += if o > i {
                    1.0
                } else if o == i {
                    0.5
                } else {
                    0.0
                };
            }
        }
        s / (id.len() * ood.len()) as f64
    }

    /// Tries every score as a threshold and keeps the largest meeting the
    /// TPR target.
    fn brute_threshold_fpr(id: &[f64], ood: &[f64]) -> (f64, f64) {
        let m = ood.len() as f64;
        let mut best = f64::NEG_INFINITY;
        for &t in id.iter().chain(ood) {
            let tpr = ood.iter().filter(|&&o| o >= t).count() as f64 / m;
            if tpr >= 0.95 && t > best {
                best = t;
            }
        }
        let fpr = id.iter().filter(|&&i| i >= best).count() as f64 / id.len() as f64;
        (best, fpr)
    }

    #[test]
    fn scores_of_simple_logits() {
        let s = score_logits(&Tensor::zeros(&[1, 11])).unwrap();
        assert!((s[0].ood_score - 1.0 / 11.0).abs() < 1e-15);
        let big = Tensor::matrix(1, 3, vec![0.0, 1.0, 800.0]).unwrap();
        let s = score_logits(&big).unwrap();
        assert!((s[0].ood_score - 1.0).abs() < 1e-15);
        assert_eq!(s[0].predicted, 1);
        let mut rng = stream(1, 1);
        let v: Vec<f64> = (0..20).map(|_| rng.random_range(-5.0..5.0)).collect();
        let l = Tensor::matrix(4, 5, v).unwrap();
        let lp = log_softmax(&l);
        for (r, s) in score_logits(&l).unwrap().iter().enumerate() {
            let id: f64 = lp.row(r)[..4].iter().map(|v| v.exp()).sum();
            assert!((s.ood_score + id - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn threshold_examples() {
        let ten: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        assert_eq!(threshold_at_tpr(&ten, 0.95).unwrap(), 0.1);
        assert_eq!(threshold_at_tpr(&[0.3; 7], 0.95).unwrap(), 0.3);
        assert_eq!(threshold_at_tpr(&[0.42], 0.95).unwrap(), 0.42);
        // twenty scores: dropping the smallest keeps exactly 95%
        let twenty: Vec<f64> = (1..=20).map(|i| i as f64).collect();
        assert_eq!(threshold_at_tpr(&twenty, 0.95).unwrap(), 2.0);
        assert!(threshold_at_tpr(&[], 0.95).is_err());
    }

    #[test]
    fn fpr_examples() {
        assert_eq!(fpr_at(0.5, &[0.1, 0.2]).unwrap(), 0.0);
        assert_eq!(fpr_at(0.2, &[0.1, 0.3]).unwrap(), 0.5);
        assert!(fpr_at(0.2, &[]).is_err());
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.1, 0.2], &[0.3, 0.4]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.1, 0.3], &[0.2, 0.4]).unwrap(), 0.75);
        assert_eq!(auroc(&[0.5], &[0.5]).unwrap(), 0.5);
        assert!(auroc(&[], &[0.5]).is_err());
    }

    #[test]
    fn aupr_examples() {
        assert_eq!(aupr(&[0.1, 0.2], &[0.3, 0.4]).unwrap(), 1.0);
        assert_eq!(aupr(&[0.1, 0.2], &[0.9]).unwrap(), 1.0);
        assert_eq!(aupr(&[0.1, 0.3], &[0.2]).unwrap(), 0.5);
        // ID 0.35 sits between the two positives: (1/2)·1 + (1/2)·(2/3)
        let v = aupr(&[0.35, 0.1], &[0.4, 0.3]).unwrap();
        assert!((v - (0.5 + 1.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn identical_distributions_give_high_fpr() {
        let mut rng = stream(3, 3);
        let id: Vec<f64> = (0..4000).map(|_| rng.random::<f64>()).collect();
        let ood: Vec<f64> = (0..4000).map(|_| rng.random::<f64>()).collect();
        let eta = threshold_at_tpr(&ood, 0.95).unwrap();
        assert!((fpr_at(eta, &id).unwrap() - 0.95).abs() < 0.02);
    }

    #[test]
    fn classification_cases() {
        let p = ClassProfile::new(vec![10, 8, 4, 2], 0.5).unwrap();
        let labels = vec![0, 1, 2, 3];
        let r = classification_report(&labels, &labels, &p).unwrap();
        assert_eq!((r.acc, r.head_acc, r.tail_acc), (1.0, Some(1.0), Some(1.0)));
        let r = classification_report(&[0, 1, 0, 0], &labels, &p).unwrap();
        assert_eq!((r.acc, r.head_acc, r.tail_acc), (0.5, Some(1.0), Some(0.0)));
        let none = ClassProfile::new(vec![10, 8, 4, 2], 0.0).unwrap();
        let r = classification_report(&labels, &labels, &none).unwrap();
        assert_eq!(r.tail_acc, None);
        assert!(classification_report(&[0], &[4], &p).is_err());
    }

    #[test]
    fn report_averages_pools() {
        let a = PoolMetrics::compute("a", &[0.1, 0.2], &[0.3, 0.4]).unwrap();
        let b = PoolMetrics::compute("b", &[0.1, 0.3], &[0.2, 0.4]).unwrap();
        let cls = ClassificationReport {
            acc: 1.0,
            head_acc: Some(1.0),
            tail_acc: None,
            head_count: 2,
            tail_count: 0,
        };
        let r = MetricsReport::new(vec![a, b], cls).unwrap();
        assert_eq!(r.average.auroc, 0.875);
        let t = r.to_table();
        assert!(t.contains("Average") && t.contains("87.50") && t.contains("tail acc n/a"), "{t}");
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<MetricsReport>(&json).unwrap(), r);
    }

    fn scores(rng: &mut impl Rng, n: usize, coarse: bool) -> Vec<f64> {
        (0..n)
            .map(|_| {
                if coarse {
                    rng.random_range(0..8) as f64 / 8.0
                } else {
                    rng.random::<f64>()
                }
            })
            .collect()
    }

    #[test]
    fn auroc_matches_all_pairs() {
        let mut rng = stream(11, 0);
        for inst in 0..200 {
            let n = rng.random_range(1..=500);
            let m = rng.random_range(1..=500);
            let coarse = inst % 2 == 0;
            let id = scores(&mut rng, n, coarse);
            let ood = scores(&mut rng, m, coarse);
            let fast = auroc(&id, &ood).unwrap();
            assert!((fast - brute_auroc(&id, &ood)).abs() < 1e-12);
            assert!((fast + auroc(&ood, &id).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn threshold_matches_sweep() {
        let mut rng = stream(12, 0);
        for inst in 0..300 {
            let n = rng.random_range(1..=200);
            let m = rng.random_range(1..=200);
            let id = scores(&mut rng, n, inst % 3 == 0);
            let ood = scores(&mut rng, m, inst % 3 == 0);
            let eta = threshold_at_tpr(&ood, 0.95).unwrap();
            let (b_eta, b_fpr) = brute_threshold_fpr(&id, &ood);
            assert_eq!(eta, b_eta);
            assert_eq!(fpr_at(eta, &id).unwrap(), b_fpr);
        }
    }

    proptest! {
        #[test]
        fn auroc_invariant_under_monotone_map(
            id in prop::collection::vec(-3.0f64..3.0, 1..40),
            ood in prop::collection::vec(-3.0f64..3.0, 1..40),
        ) {
            let f = |v: &Vec<f64>| v.iter().map(|x| (2.0 * x).exp() + 1.0).collect::<Vec<_>>();
            let a = auroc(&id, &ood).unwrap();
            prop_assert!((a - auroc(&f(&id), &f(&ood)).unwrap()).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn fpr_nonincreasing_in_threshold(id in prop::collection::vec(0.0f64..1.0, 1..50), a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(fpr_at(hi, &id).unwrap() <= fpr_at(lo, &id).unwrap());
        }

        #[test]
        fn aupr_matches_threshold_enumeration(
            id in prop::collection::vec(0u8..6, 1..30),
            ood in prop::collection::vec(0u8..6, 1..30),
        ) {
            let id: Vec<f64> = id.into_iter().map(f64::from).collect();
            let ood: Vec<f64> = ood.into_iter().map(f64::from).collect();
            let mut ts: Vec<f64> = id.iter().chain(&ood).copied().collect();
            ts.sort_by(|a, b| b.total_cmp(a));
            ts.dedup();
            let m = ood.len() as f64;
            let mut prev_recall = 0.0;
            let mut ap = 0.0;
            for t in ts {
                let tp = ood.iter().filter(|&&o| o >= t).count() as f64;
                let fp = id.iter().filter(|&&i| i >= t).count() as f64;
                let recall = tp / m;
                ap += (recall - prev_recall) * tp / (tp + fp);
                prev_recall = recall;
            }
            prop_assert!((aupr(&id, &ood).unwrap() - ap).abs() < 1e-12);
        }
    }
}
