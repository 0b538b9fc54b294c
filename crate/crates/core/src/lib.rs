//! Long-tailed OOD detection: a small reverse-mode autodiff core, synthetic
//! long-tailed data, a classifier with an extra outlier class, contrastive
//! losses with class-wise temperatures, outlier mining, staged training and
//! evaluation metrics.

// `!(x > 0.0)` is how NaN gets rejected along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod detector;
pub mod error;
pub mod experiment;
pub mod losses;
pub mod mining;
pub mod model;
pub mod ndcore;
pub mod rng;
pub mod temperature;
pub mod trainer;

pub use data::{BenchmarkConfig, ClassProfile, LabeledDataset, OutlierPool};
pub use detector::{MetricsReport, PoolMetrics};
pub use error::{Error, Result};
pub use experiment::{run_experiment, ExperimentConfig};
pub use losses::{LossBreakdown, LossWeights, Temperatures};
pub use mining::{MinedPartition, ScoreForm};
pub use model::{ModelDims, ModelParams};
pub use ndcore::{Tape, Tensor, Var};
pub use temperature::{TemperatureSchedule, Variant};
pub use trainer::{fit, TrainConfig, TrainState};
