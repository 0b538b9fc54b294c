use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use ltood_core::detector::MetricsReport;
use ltood_core::TrainConfig;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::eval::{eval_paths, evaluate_files, write_report};
use crate::files::{ensure_dir, read_json, relative, write_text, ModelMeta};
use crate::manifest::ManifestBuilder;
use crate::train::{run_label, train_into, TrainOverrides};
use crate::{CliError, CliResult};

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Benchmark directory holding train.csv, aux.csv, test.csv and ood_*.csv.
    #[arg(long)]
    pub data: PathBuf,
    /// Number of ID classes; inferred from the largest label when omitted.
    #[arg(long)]
    pub classes: Option<usize>,
    /// Sweep JSON: {"runs": [{"name": "...", "set": {"key": value, ...}}, ...]}.
    #[arg(long, conflicts_with_all = ["param", "values"])]
    pub sweep: Option<PathBuf>,
    /// Single training key to sweep (e.g. k, variant, stage_split).
    #[arg(long, requires = "values")]
    pub param: Option<String>,
    /// Comma-separated values for --param.
    #[arg(long, requires = "param")]
    pub values: Option<String>,
    /// Comma-separated training seeds; every run is repeated per seed.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Maximum number of runs trained in parallel.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[command(flatten)]
    pub base: TrainOverrides,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub name: String,
    #[serde(default)]
    pub set: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub runs: Vec<SweepRun>,
}

fn scalar(token: &str) -> Value {
    serde_json::from_str(token).unwrap_or_else(|_| Value::String(token.to_string()))
}

impl AblateArgs {
    fn sweep(&self) -> CliResult<Sweep> {
        let sweep = match (&self.sweep, &self.param, &self.values) {
            (Some(p), _, _) => read_json::<Sweep>(p)?,
            (None, Some(param), Some(values)) => Sweep {
                runs: values
                    .split(',')
                    .map(str::trim)
                    .filter(|v| !v.is_empty())
                    .map(|v| SweepRun {
                        name: format!("{param}={v}"),
                        set: Map::from_iter([(param.clone(), scalar(v))]),
                    })
                    .collect(),
            },
            _ => return Err(CliError::usage("give either --sweep or --param with --values")),
        };
        if sweep.runs.is_empty() {
            return Err(CliError::usage("sweep has no runs"));
        }
        Ok(sweep)
    }
}

/// Applies a delta to a base configuration.
pub fn apply_delta(base: &TrainConfig, set: &Map<String, Value>) -> Result<TrainConfig, String> {
    let mut v = serde_json::to_value(base).map_err(|e| e.to_string())?;
    let obj = v.as_object_mut().expect("config serializes to an object");
    for (k, val) in set {
        obj.insert(k.clone(), val.clone());
    }
    let c: TrainConfig = serde_json::from_value(v).map_err(|e| e.to_string())?;
    c.validate().map_err(|e| e.to_string())?;
    Ok(c)
}

fn dir_name(name: &str, seed: u64) -> String {
    let clean: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.=".contains(c) { c } else { '_' })
        .collect();
    format!("{clean}-s{seed}")
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

struct Outcome {
    name: String,
    seed: u64,
    set: Map<String, Value>,
    dir: String,
    result: Result<(TrainConfig, MetricsReport, Vec<String>), String>,
}

fn run_one(data: &Path, classes: Option<usize>, out: &Path, config: &TrainConfig) -> CliResult<(MetricsReport, Vec<String>)> {
    let mut files = train_into(out, config, &data.join("train.csv"), &data.join("aux.csv"), classes, None, false)?;
    let (ckpt, meta): (_, ModelMeta) = crate::files::load_model(&out.join("model.json"))?;
    let profile = meta.profile(None)?;
    let (test, ood) = eval_paths(Some(data), None, &[])?;
    let report = evaluate_files(&ckpt.params, &profile, &test, &ood)?;
    files.extend(write_report(out, &report)?);
    Ok((report, files))
}

pub fn run(args: AblateArgs, argv: Vec<String>) -> CliResult {
    let base = args.base.resolve()?;
    let sweep = args.sweep()?;
    let seeds = args.seeds.clone().unwrap_or_else(|| vec![base.seed]);
    if seeds.is_empty() {
        return Err(CliError::usage("--seeds is empty"));
    }
    if args.jobs == 0 {
        return Err(CliError::usage("--jobs must be >= 1"));
    }
    ensure_dir(&args.out)?;

    let jobs: Vec<(SweepRun, u64)> = sweep
        .runs
        .iter()
        .flat_map(|r| seeds.iter().map(move |&s| (r.clone(), s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs)
        .build()
        .context("building worker pool")?;
    let outcomes: Vec<Outcome> = pool.install(|| {
        jobs.par_iter()
            .map(|(run, seed)| {
                let dir = format!("runs/{}", dir_name(&run.name, *seed));
                let mut set = run.set.clone();
                set.insert("seed".into(), Value::from(*seed));
                let result = apply_delta(&base, &set).and_then(|cfg| {
                    run_one(&args.data, args.classes, &args.out.join(&dir), &cfg)
                        .map(|(report, files)| (cfg, report, files))
                        .map_err(|e| e.to_string())
                });
                Outcome {
                    name: run.name.clone(),
                    seed: *seed,
                    set: run.set.clone(),
                    dir,
                    result,
                }
            })
            .collect()
    });

    let mut csv = String::from("name,seed,label,status,auroc,aupr,fpr95,acc,head_acc,tail_acc,set\n");
    let mut m = ManifestBuilder::new("ablate", argv, &args.out);
    let mut failures = 0;
    for o in &outcomes {
        let set = serde_json::to_string(&o.set)?;
        match &o.result {
            Ok((cfg, r, files)) => {
                let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:?}"));
                let a = &r.average;
                let _ = writeln!(
                    csv,
                    "{},{},{},ok,{:?},{:?},{:?},{:?},{},{},{}",
                    csv_field(&o.name),
                    o.seed,
                    run_label(cfg),
                    a.auroc,
                    a.aupr,
                    a.fpr95,
                    r.classification.acc,
                    opt(r.classification.head_acc),
                    opt(r.classification.tail_acc),
                    csv_field(&set)
                );
                for f in files {
                    m.output(relative(&args.out, &args.out.join(&o.dir).join(f)));
                }
            }
            Err(e) => {
                failures += 1;
                eprintln!("run {} (seed {}) failed: {e}", o.name, o.seed);
                let _ = writeln!(
                    csv,
                    "{},{},,{},,,,,,,{}",
                    csv_field(&o.name),
                    o.seed,
                    csv_field(&format!("failed: {e}")),
                    csv_field(&set)
                );
            }
        }
    }
    write_text(&args.out.join("comparison.csv"), &csv)?;
    m.input(&args.data.join("train.csv"))?
        .input(&args.data.join("aux.csv"))?
        .input(&args.data.join("test.csv"))?;
    for p in crate::files::ood_files(&args.data)? {
        m.input(&p)?;
    }
    if let Some(p) = &args.sweep {
        m.input(p)?;
    }
    if let Some(p) = &args.base.config {
        m.input(p)?;
    }
    m.output("comparison.csv")
        .seeds(seeds)
        .config(serde_json::json!({ "base": base, "sweep": sweep }));
    m.write()?;
    print!("{csv}");
    if failures == outcomes.len() {
        return Err(CliError::Runtime(anyhow::anyhow!("all {failures} runs failed")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_overrides_and_validates() {
        let base = TrainConfig::default();
        let set = Map::from_iter([("k".to_string(), Value::from(0.4))]);
        assert_eq!(apply_delta(&base, &set).unwrap().k, 0.4);
        let typo = Map::from_iter([("kk".to_string(), Value::from(0.4))]);
        assert!(apply_delta(&base, &typo).is_err());
        let bad = Map::from_iter([("stage_split".to_string(), Value::from(2.0))]);
        assert!(apply_delta(&base, &bad).is_err());
    }

    #[test]
    fn scalar_tokens() {
        assert_eq!(scalar("0.5"), Value::from(0.5));
        assert_eq!(scalar("sqrt"), Value::from("sqrt"));
        assert_eq!(scalar("true"), Value::from(true));
    }

    #[test]
    fn run_dirs_are_path_safe() {
        assert_eq!(dir_name("k=0.4", 2), "k=0.4-s2");
        assert_eq!(dir_name("a/b c", 0), "a_b_c-s0");
        assert_eq!(csv_field("a,b"), "\"a,b\"");
    }
}
