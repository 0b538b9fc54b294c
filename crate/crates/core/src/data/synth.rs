use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::profile::{longtail_counts, ClassProfile};
use super::{LabeledDataset, OutlierPool, PoolSource, Split};
use crate::error::{Error, Result};
use crate::ndcore::Tensor;
use crate::rng::stream;

/// Isotropic Gaussian class clusters: one mean per class and a shared
/// standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub means: Vec<Vec<f64>>,
    pub std: f64,
}

impl ClusterSpec {
    /// Means placed at `radius` along random directions.
    pub fn random(classes: usize, dim: usize, radius: f64, std: f64, seed: u64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::invalid(format!("feature dimension must be >= 2, got {dim}")));
        }
        let mut rng = stream(seed, 0x6d65616e);
        let means = (0..classes)
            .map(|_| {
                let v = gaussian_vec(&mut rng, dim);
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.into_iter().map(|x| radius * x / n).collect()
            })
            .collect();
        Ok(Self { means, std })
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    fn validate(&self, classes: usize) -> Result<()> {
        if !(self.std > 0.0 && self.std.is_finite()) {
            return Err(Error::invalid(format!("cluster stddev must be > 0, got {}", self.std)));
        }
        if self.means.len() != classes {
            return Err(Error::invalid(format!(
                "cluster spec has {} means for {classes} classes",
                self.means.len()
            )));
        }
        if self.dim() < 2 || self.means.iter().any(|m| m.len() != self.dim()) {
            return Err(Error::invalid("cluster means must share a dimension >= 2"));
        }
        Ok(())
    }
}

fn gaussian_vec<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn unit_vec<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v = gaussian_vec(rng, dim);
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Draws a long-tailed training split with exactly `profile.counts()`
/// samples per class and a balanced test split of `test_per_class` per class.
pub fn synth_id(
    profile: &ClassProfile,
    clusters: &ClusterSpec,
    test_per_class: usize,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    clusters.validate(profile.classes())?;
    let dim = clusters.dim();
    let draw = |counts: &[usize], stream_id: u64, split: Split| -> Result<LabeledDataset> {
        let mut rng = stream(seed, stream_id);
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for (c, &n) in counts.iter().enumerate() {
            for _ in 0..n {
                values.extend(
                    clusters.means[c]
                        .iter()
                        .map(|m| m + clusters.std * rng.sample::<f64, _>(StandardNormal)),
                );
                labels.push(c);
            }
        }
        LabeledDataset::new(Tensor::new(vec![labels.len(), dim], values)?, labels, profile.classes(), split)
    };
    let train = draw(profile.counts(), 1, Split::Train)?;
    let test = draw(&vec![test_per_class; profile.classes()], 2, Split::Test)?;
    Ok((train, test))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutlierKind {
    NearTail,
    NearHead,
    Ambient,
}

impl OutlierKind {
    pub const ALL: [OutlierKind; 3] = [OutlierKind::NearTail, OutlierKind::NearHead, OutlierKind::Ambient];

    pub fn name(self) -> &'static str {
        match self {
            OutlierKind::NearTail => "near-tail",
            OutlierKind::NearHead => "near-head",
            OutlierKind::Ambient => "ambient",
        }
    }
}

impl std::str::FromStr for OutlierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "near-tail" => Ok(OutlierKind::NearTail),
            "near-head" => Ok(OutlierKind::NearHead),
            "ambient" => Ok(OutlierKind::Ambient),
            other => Err(Error::invalid(format!("unknown outlier kind '{other}'"))),
        }
    }
}

/// Geometry of the outlier generators.
///
/// Near-class outliers sit on a shell of radius `shift` around a class mean,
/// jittered by `spread · std`; ambient outliers are `N(0, ambient_std²·I)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutlierParams {
    pub shift: f64,
    pub spread: f64,
    pub ambient_std: f64,
}

impl Default for OutlierParams {
    fn default() -> Self {
        Self {
            shift: 3.0,
            spread: 1.0,
            ambient_std: 3.0,
        }
    }
}

pub fn synth_outliers(
    kind: OutlierKind,
    n: usize,
    clusters: &ClusterSpec,
    profile: &ClassProfile,
    params: &OutlierParams,
    seed: u64,
) -> Result<OutlierPool> {
    if n == 0 {
        return Err(Error::invalid("outlier pool size must be >= 1"));
    }
    clusters.validate(profile.classes())?;
    let dim = clusters.dim();
    let anchors: Vec<usize> = match kind {
        OutlierKind::NearTail => profile.tail_classes().collect(),
        OutlierKind::NearHead => profile.head_classes().collect(),
        OutlierKind::Ambient => vec![],
    };
    if kind != OutlierKind::Ambient && anchors.is_empty() {
        return Err(Error::invalid(format!(
            "{} outliers need at least one such class",
            kind.name()
        )));
    }
    let mut rng = stream(seed, 0x6f75_7400 + kind as u64);
    let mut values = Vec::with_capacity(n * dim);
    for _ in 0..n {
        match kind {
            OutlierKind::Ambient => {
                values.extend(gaussian_vec(&mut rng, dim).into_iter().map(|x| params.ambient_std * x));
            }
            _ => {
                let c = anchors[rng.random_range(0..anchors.len())];
                let dir = unit_vec(&mut rng, dim);
                let jitter = gaussian_vec(&mut rng, dim);
                values.extend((0..dim).map(|j| {
                    clusters.means[c][j] + params.shift * dir[j] + params.spread * clusters.std * jitter[j]
                }));
            }
        }
    }
    Ok(OutlierPool::new(
        Tensor::new(vec![n, dim], values)?,
        PoolSource {
            generator: kind.name().to_string(),
            seed: Some(seed),
        },
    ))
}

/// Parameters of the complete synthetic long-tailed OOD benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub classes: usize,
    pub n_max: usize,
    pub imbalance: f64,
    pub tail_fraction: f64,
    pub dim: usize,
    pub radius: f64,
    pub class_std: f64,
    pub test_per_class: usize,
    /// Auxiliary training outliers per generator kind.
    pub aux_per_kind: usize,
    pub ood_test_size: usize,
    pub outliers: OutlierParams,
    /// Geometry of the OOD test pools; defaults to the training geometry.
    pub test_outliers: Option<OutlierParams>,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            classes: 10,
            n_max: 500,
            imbalance: 100.0,
            tail_fraction: 0.6,
            dim: 8,
            radius: 3.0,
            class_std: 1.0,
            test_per_class: 100,
            aux_per_kind: 2000,
            ood_test_size: 1000,
            outliers: OutlierParams::default(),
            test_outliers: None,
            seed: 0,
        }
    }
}

/// A generated benchmark: ID train/test splits, an auxiliary outlier pool
/// mixing all generator kinds, and one OOD test pool per kind.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub config: BenchmarkConfig,
    pub profile: ClassProfile,
    pub clusters: ClusterSpec,
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub aux: OutlierPool,
    pub ood_tests: Vec<(String, OutlierPool)>,
}

impl BenchmarkConfig {
    pub fn profile(&self) -> Result<ClassProfile> {
        ClassProfile::new(
            longtail_counts(self.classes, self.n_max, self.imbalance)?,
            self.tail_fraction,
        )
    }

    pub fn generate(&self) -> Result<Benchmark> {
        let profile = self.profile()?;
        let clusters = ClusterSpec::random(self.classes, self.dim, self.radius, self.class_std, self.seed)?;
        let (train, test) = synth_id(&profile, &clusters, self.test_per_class, self.seed)?;

        let kinds: Vec<OutlierKind> = OutlierKind::ALL
            .into_iter()
            .filter(|k| match k {
                OutlierKind::NearTail => profile.tail_count() > 0,
                OutlierKind::NearHead => profile.head_count() > 0,
                OutlierKind::Ambient => true,
            })
            .collect();

        let aux_parts = kinds
            .iter()
            .map(|&k| {
                let s = sub_seed(self.seed, 100 + k as u64);
                synth_outliers(k, self.aux_per_kind, &clusters, &profile, &self.outliers, s)
            })
            .collect::<Result<Vec<_>>>()?;
        let aux = OutlierPool::concat(
            &aux_parts,
            PoolSource {
                generator: "mixed".into(),
                seed: Some(self.seed),
            },
        )?;

        let test_params = self.test_outliers.unwrap_or(self.outliers);
        let ood_tests = kinds
            .iter()
            .map(|&k| {
                let s = sub_seed(self.seed, 200 + k as u64);
                let pool = synth_outliers(k, self.ood_test_size, &clusters, &profile, &test_params, s)?;
                Ok((k.name().to_string(), pool))
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(Benchmark {
            config: self.clone(),
            profile,
            clusters,
            train,
            test,
            aux,
            ood_tests,
        })
    }
}

fn sub_seed(seed: u64, salt: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(salt)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    }

    fn nearest(row: &[f64], means: &[Vec<f64>], classes: std::ops::Range<usize>) -> f64 {
        classes.map(|c| dist(row, &means[c])).fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn deterministic_under_seed() {
        let p = ClassProfile::new(vec![20, 10, 5], 0.34).unwrap();
        let cl = ClusterSpec::random(3, 4, 3.0, 1.0, 9).unwrap();
        let a = synth_id(&p, &cl, 7, 11).unwrap();
        let b = synth_id(&p, &cl, 7, 11).unwrap();
        assert_eq!(a, b);
        let c = synth_id(&p, &cl, 7, 12).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn per_class_counts_match_profile() {
        let p = ClassProfile::new(vec![50, 20, 3], 0.34).unwrap();
        let cl = ClusterSpec::random(3, 8, 3.0, 1.0, 1).unwrap();
        let (train, test) = synth_id(&p, &cl, 13, 2).unwrap();
        assert_eq!(train.class_counts(), vec![50, 20, 3]);
        assert_eq!(test.class_counts(), vec![13; 3]);
        assert_eq!(train.split(), Split::Train);
    }

    /// Nearest-mean oracle on two well-separated clusters.
    #[test]
    fn nearest_mean_separates_two_classes() {
        let p = ClassProfile::new(vec![10, 5], 0.5).unwrap();
        let cl = ClusterSpec {
            means: vec![vec![4.0, 0.0], vec![-4.0, 0.0]],
            std: 1.0,
        };
        let (train, test) = synth_id(&p, &cl, 100, 5).unwrap();
        let mut centroids = vec![vec![0.0; 2]; 2];
        for (i, &l) in train.labels().iter().enumerate() {
            for j in 0..2 {
                centroids[l][j] += train.features().row(i)[j] / p.counts()[l] as f64;
            }
        }
        let correct = (0..test.len())
            .filter(|&i| {
                let r = test.features().row(i);
                let pred = if dist(r, &centroids[0]) <= dist(r, &centroids[1]) { 0 } else { 1 };
                pred == test.labels()[i]
            })
            .count();
        assert!(correct as f64 / test.len() as f64 > 0.95);
    }

    #[test]
    fn degenerate_stddev_rejected() {
        let p = ClassProfile::new(vec![3, 2], 0.5).unwrap();
        let mut cl = ClusterSpec::random(2, 4, 3.0, 1.0, 1).unwrap();
        cl.std = 0.0;
        assert!(synth_id(&p, &cl, 1, 1).is_err());
        assert!(ClusterSpec::random(2, 1, 3.0, 1.0, 1).is_err());
    }

    #[test]
    fn near_tail_pool_is_closer_to_tail() {
        let p = ClassProfile::new(longtail_counts(10, 500, 100.0).unwrap(), 0.6).unwrap();
        let cl = ClusterSpec::random(10, 8, 4.0, 1.0, 3).unwrap();
        let pool = synth_outliers(OutlierKind::NearTail, 2000, &cl, &p, &OutlierParams::default(), 4).unwrap();
        let (mut dt, mut dh) = (0.0, 0.0);
        for i in 0..pool.len() {
            let r = pool.features().row(i);
            dt += nearest(r, &cl.means, p.tail_classes());
            dh += nearest(r, &cl.means, p.head_classes());
        }
        assert!(dt < dh, "tail {dt} head {dh}");
    }

    #[test]
    fn wide_ambient_pool_is_roughly_equidistant() {
        let p = ClassProfile::new(longtail_counts(10, 500, 100.0).unwrap(), 0.6).unwrap();
        let cl = ClusterSpec::random(10, 8, 4.0, 1.0, 3).unwrap();
        let params = OutlierParams {
            ambient_std: 50.0,
            ..OutlierParams::default()
        };
        let pool = synth_outliers(OutlierKind::Ambient, 2000, &cl, &p, &params, 4).unwrap();
        let (mut dt, mut dh) = (0.0, 0.0);
        for i in 0..pool.len() {
            let r = pool.features().row(i);
            dt += nearest(r, &cl.means, p.tail_classes());
            dh += nearest(r, &cl.means, p.head_classes());
        }
        let ratio = dt / dh;
        assert!((0.8..=1.25).contains(&ratio), "{ratio}");
    }

    #[test]
    fn empty_pool_and_unknown_kind_rejected() {
        let p = ClassProfile::new(vec![3, 2], 0.5).unwrap();
        let cl = ClusterSpec::random(2, 4, 3.0, 1.0, 1).unwrap();
        assert!(synth_outliers(OutlierKind::Ambient, 0, &cl, &p, &OutlierParams::default(), 1).is_err());
        assert!("near-middle".parse::<OutlierKind>().is_err());
        assert_eq!("near-tail".parse::<OutlierKind>().unwrap(), OutlierKind::NearTail);
    }

    #[test]
    fn benchmark_is_pure_function_of_config() {
        let cfg = BenchmarkConfig {
            aux_per_kind: 50,
            ood_test_size: 40,
            test_per_class: 5,
            ..BenchmarkConfig::default()
        };
        let a = cfg.generate().unwrap();
        let b = cfg.generate().unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.aux, b.aux);
        assert_eq!(a.ood_tests, b.ood_tests);
        assert_eq!(a.aux.len(), 150);
        assert_eq!(a.ood_tests.len(), 3);
    }
}
