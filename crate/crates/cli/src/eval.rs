use std::path::{Path, PathBuf};

use clap::Args;
use ltood_core::data::Split;
use ltood_core::detector::{evaluate, MetricsReport};
use ltood_core::mining::mine;
use ltood_core::model::ModelParams;
use ltood_core::rng::stream;
use ltood_core::{ClassProfile, ScoreForm, Tensor};
use rand::seq::index;
use serde::Serialize;

use crate::files::{ensure_dir, load_labeled, load_model, load_pool, ood_files, pool_name, write_json, write_text};
use crate::manifest::ManifestBuilder;
use crate::{CliError, CliResult};

#[derive(Debug, Args)]
pub struct MineArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Checkpoint manifest written by `train` (model.json).
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Candidate outlier CSV.
    #[arg(long)]
    pub pool: PathBuf,
    /// Batch size B; 3B candidates are drawn without replacement.
    #[arg(long, default_value_t = 48)]
    pub batch: usize,
    /// Tail fraction; defaults to the one the model was trained with.
    #[arg(long)]
    pub k: Option<f64>,
    /// Outlier score: head-log-prob or tail-mass; defaults to the training setting.
    #[arg(long)]
    pub score_form: Option<ScoreForm>,
    /// Random seed for the candidate draw.
    #[arg(long, env = "LTOOD_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Serialize)]
struct PartitionOut<'a> {
    tail_like: &'a [usize],
    neutral: &'a [usize],
    head_like: &'a [usize],
}

#[derive(Debug, Serialize)]
struct MineOut<'a> {
    /// Row indices into the pool, in candidate order.
    candidates: &'a [usize],
    scores: &'a [f64],
    /// Positions in `candidates`.
    partition: PartitionOut<'a>,
}

pub fn run_mine(args: MineArgs, argv: Vec<String>) -> CliResult {
    let (ckpt, meta) = load_model(&args.checkpoint)?;
    let profile = meta.profile(args.k)?;
    let pool = load_pool(&args.pool)?;
    let n = 3 * args.batch;
    if args.batch == 0 || pool.len() < n {
        return Err(CliError::usage(format!(
            "need 3·B = {n} candidates but the pool has {} rows",
            pool.len()
        )));
    }
    let mut rng = stream(args.seed, 7);
    let candidates: Vec<usize> = index::sample(&mut rng, pool.len(), n).into_vec();
    let feats = pool.features().select_rows(&candidates);
    let form = args.score_form.unwrap_or(meta.train.score_form);
    let part = mine(&feats, &ckpt.params, &profile, form)?;

    ensure_dir(&args.out)?;
    let out = MineOut {
        candidates: &candidates,
        scores: &part.scores,
        partition: PartitionOut {
            tail_like: &part.tail_like,
            neutral: &part.neutral,
            head_like: &part.head_like,
        },
    };
    write_json(&args.out.join("mined.json"), &out)?;
    let mut m = ManifestBuilder::new("mine", argv, &args.out);
    m.input(&args.checkpoint)?
        .input(&args.checkpoint.with_extension("bin"))?
        .input(&args.pool)?;
    m.output("mined.json").seeds(vec![args.seed]);
    m.write()?;
    println!("mined {n} candidates into {}", args.out.join("mined.json").display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Checkpoint manifest written by `train` (model.json).
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Benchmark directory holding test.csv and ood_*.csv.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Labeled ID test CSV (overrides --data).
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// OOD test pool CSV; repeat for several pools (overrides --data).
    #[arg(long)]
    pub ood: Vec<PathBuf>,
    /// Tail fraction for the head/tail accuracy split; defaults to training.
    #[arg(long)]
    pub k: Option<f64>,
}

/// Evaluates `params` and returns the report plus every input file read.
pub fn evaluate_files(
    params: &ModelParams,
    profile: &ClassProfile,
    test_path: &Path,
    ood_paths: &[PathBuf],
) -> CliResult<MetricsReport> {
    if ood_paths.is_empty() {
        return Err(CliError::usage("at least one OOD test pool is required"));
    }
    let test = load_labeled(test_path, Some(profile.classes()), Split::Test)?;
    let pools = ood_paths
        .iter()
        .map(|p| Ok((pool_name(p), load_pool(p)?)))
        .collect::<CliResult<Vec<_>>>()?;
    let refs: Vec<(String, &Tensor)> = pools.iter().map(|(n, p)| (n.clone(), p.features())).collect();
    Ok(evaluate(params, &test, &refs, profile)?)
}

pub fn eval_paths(data: Option<&Path>, test: Option<&Path>, ood: &[PathBuf]) -> CliResult<(PathBuf, Vec<PathBuf>)> {
    let test = match (test, data) {
        (Some(t), _) => t.to_path_buf(),
        (None, Some(d)) => d.join("test.csv"),
        (None, None) => return Err(CliError::usage("missing --data or --test")),
    };
    let ood = match (ood.is_empty(), data) {
        (false, _) => ood.to_vec(),
        (true, Some(d)) => ood_files(d)?,
        (true, None) => return Err(CliError::usage("missing --data or --ood")),
    };
    Ok((test, ood))
}

pub fn write_report(out: &Path, report: &MetricsReport) -> CliResult<Vec<String>> {
    write_json(&out.join("metrics.json"), report)?;
    write_text(&out.join("metrics.txt"), &report.to_table())?;
    Ok(vec!["metrics.json".into(), "metrics.txt".into()])
}

pub fn run_eval(args: EvalArgs, argv: Vec<String>) -> CliResult {
    let (ckpt, meta) = load_model(&args.checkpoint)?;
    let profile = meta.profile(args.k)?;
    let (test, ood) = eval_paths(args.data.as_deref(), args.test.as_deref(), &args.ood)?;
    let report = evaluate_files(&ckpt.params, &profile, &test, &ood)?;
    ensure_dir(&args.out)?;
    let outputs = write_report(&args.out, &report)?;
    let mut m = ManifestBuilder::new("eval", argv, &args.out);
    m.input(&args.checkpoint)?
        .input(&args.checkpoint.with_extension("bin"))?
        .input(&test)?;
    for p in &ood {
        m.input(p)?;
    }
    for o in outputs {
        m.output(o);
    }
    m.seeds(vec![ckpt.seed]).config(serde_json::to_value(&meta)?);
    m.write()?;
    print!("{}", report.to_table());
    Ok(())
}
