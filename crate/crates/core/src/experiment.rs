//! Synthetic benchmark → training → evaluation in one call.

use serde::{Deserialize, Serialize};

use crate::data::{Benchmark, BenchmarkConfig};
use crate::detector::{evaluate, MetricsReport};
use crate::error::Result;
use crate::trainer::{fit, FitOutput, TrainConfig};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub benchmark: BenchmarkConfig,
    pub train: TrainConfig,
}

impl ExperimentConfig {
    /// Same configuration with data and training both reseeded.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.benchmark.seed = seed;
        c.train.seed = seed;
        c
    }
}

pub struct ExperimentResult {
    pub benchmark: Benchmark,
    pub fit: FitOutput,
    pub report: MetricsReport,
}

pub fn evaluate_fit(benchmark: &Benchmark, fit: &FitOutput) -> Result<MetricsReport> {
    let pools: Vec<(String, &crate::ndcore::Tensor)> =
        benchmark.ood_tests.iter().map(|(n, p)| (n.clone(), p.features())).collect();
    evaluate(&fit.state.params, &benchmark.test, &pools, &fit.profile)
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let benchmark = config.benchmark.generate()?;
    let fit = fit(&config.train, &benchmark.train, &benchmark.aux)?;
    let report = evaluate_fit(&benchmark, &fit)?;
    Ok(ExperimentResult { benchmark, fit, report })
}
