use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use ltood_core::data::Split;
use ltood_core::model::save_checkpoint;
use ltood_core::trainer::{fit_from, train_profile, TrainState};
use ltood_core::{Error, ModelDims, ScoreForm, TemperatureSchedule, TrainConfig, Variant};

use crate::files::{ensure_dir, load_labeled, load_model, load_pool, read_json, write_json, ModelMeta};
use crate::manifest::ManifestBuilder;
use crate::{CliError, CliResult};

/// Training flags shared by `train` and `ablate`.
#[derive(Debug, Clone, Args, Default)]
pub struct TrainOverrides {
    /// Training configuration JSON; the flags below override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Total epochs E.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Batch size B (ID samples and outliers per step).
    #[arg(long)]
    pub batch: Option<usize>,
    /// Weight of the outlier-class cross-entropy.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Weight of the tail-class contrastive loss.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Weight of the outlier-prototype head-class loss.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Fraction of classes treated as tail.
    #[arg(long)]
    pub k: Option<f64>,
    /// Base temperature.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Fraction of epochs trained with mixed outliers.
    #[arg(long)]
    pub stage_split: Option<f64>,
    /// Temperature schedule shape: sqrt or linear.
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Outlier score used for mining: head-log-prob or tail-mass.
    #[arg(long)]
    pub score_form: Option<ScoreForm>,
    /// Initial learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Re-mine candidate outliers every N iterations.
    #[arg(long)]
    pub mine_every: Option<usize>,
    /// Keep the learning rate constant instead of cosine annealing.
    #[arg(long)]
    pub no_cosine: bool,
    /// Random seed.
    #[arg(long, env = "LTOOD_SEED")]
    pub seed: Option<u64>,
}

impl TrainOverrides {
    pub fn resolve(&self) -> CliResult<TrainConfig> {
        let mut c: TrainConfig = match &self.config {
            Some(p) => read_json(p)?,
            None => TrainConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { c.$f = v; } )* };
        }
        set!(epochs, batch, alpha, beta, gamma, k, tau, stage_split, variant, score_form, lr, mine_every, seed);
        if self.no_cosine {
            c.cosine = false;
        }
        c.validate()?;
        Ok(c)
    }
}

/// Where training data comes from: a `synth` directory or explicit files.
#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Benchmark directory holding train.csv and aux.csv (and test.csv, ood_*.csv).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Labeled training CSV (overrides --data).
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Auxiliary outlier CSV (overrides --data).
    #[arg(long)]
    pub aux: Option<PathBuf>,
    /// Number of ID classes; inferred from the largest label when omitted.
    #[arg(long)]
    pub classes: Option<usize>,
}

impl DataArgs {
    pub fn paths(&self) -> CliResult<(PathBuf, PathBuf)> {
        let pick = |explicit: &Option<PathBuf>, name: &str| -> CliResult<PathBuf> {
            match (explicit, &self.data) {
                (Some(p), _) => Ok(p.clone()),
                (None, Some(d)) => Ok(d.join(name)),
                (None, None) => Err(CliError::usage(format!("missing --data or --{}", name.trim_end_matches(".csv")))),
            }
        };
        Ok((pick(&self.train, "train.csv")?, pick(&self.aux, "aux.csv")?))
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub overrides: TrainOverrides,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

pub fn run_label(config: &TrainConfig) -> &'static str {
    if config.is_ocl_baseline() {
        "ocl-baseline"
    } else {
        "rscl"
    }
}

/// Trains and writes checkpoint, log, temperature table and resolved config
/// into `out`. Returns the output file names.
pub fn train_into(
    out: &Path,
    config: &TrainConfig,
    train_path: &Path,
    aux_path: &Path,
    classes: Option<usize>,
    resume: Option<&Path>,
    echo: bool,
) -> CliResult<Vec<String>> {
    let train = load_labeled(train_path, classes, Split::Train)?;
    let aux = load_pool(aux_path)?;
    let profile = train_profile(&train, config.k)?;
    let dims = ModelDims::new(train.dim(), train.classes());
    let state = match resume {
        Some(p) => {
            let (ckpt, _) = load_model(p)?;
            if *ckpt.params.dims() != dims {
                return Err(CliError::usage("checkpoint dimensions do not match the training data"));
            }
            TrainState::from_checkpoint(ckpt)
        }
        None => TrainState::new(dims, config.seed),
    };
    ensure_dir(out)?;

    let log_path = out.join("train_log.jsonl");
    let mut log = BufWriter::new(File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?);
    let mut io_error = None;
    let mut epoch_sum = (usize::MAX, 0.0, 0usize);
    let result = fit_from(state, config, &train, &aux, |r| {
        if io_error.is_none() {
            let line = serde_json::to_string(r).expect("log record serializes");
            if let Err(e) = writeln!(log, "{line}").and_then(|_| log.flush()) {
                io_error = Some(e);
            }
        }
        if echo {
            if r.epoch != epoch_sum.0 && epoch_sum.2 > 0 {
                eprintln!("epoch {:>3}  loss {:.4}", epoch_sum.0, epoch_sum.1 / epoch_sum.2 as f64);
                epoch_sum = (r.epoch, 0.0, 0);
            }
            if epoch_sum.2 == 0 {
                epoch_sum.0 = r.epoch;
            }
            epoch_sum.1 += r.total;
            epoch_sum.2 += 1;
        }
    });
    drop(log);
    if let Some(e) = io_error {
        return Err(CliError::Runtime(anyhow::Error::new(e).context("writing training log")));
    }
    if echo && epoch_sum.2 > 0 {
        eprintln!("epoch {:>3}  loss {:.4}", epoch_sum.0, epoch_sum.1 / epoch_sum.2 as f64);
    }
    let fit = match result {
        Ok(f) => f,
        Err(Error::NonFiniteLoss { diagnostic, .. }) => {
            let path = out.join("diagnostic.json");
            write_json(&path, &diagnostic)?;
            return Err(CliError::Runtime(anyhow::anyhow!(
                "non-finite loss at epoch {}, step {}; diagnostic written to {}",
                diagnostic.epoch,
                diagnostic.step,
                path.display()
            )));
        }
        Err(e) => return Err(e.into()),
    };

    let meta = ModelMeta {
        train: config.clone(),
        class_counts: profile.counts().to_vec(),
    };
    let mut ckpt = fit.state.to_checkpoint(config)?;
    ckpt.config = serde_json::to_value(&meta)?;
    save_checkpoint(out.join("model.json"), &ckpt)?;

    let schedule = TemperatureSchedule::new(config.tau, config.epochs, config.variant, profile.normalized().to_vec())?;
    let temps = out.join("temperatures.csv");
    let mut f = BufWriter::new(File::create(&temps).with_context(|| format!("creating {}", temps.display()))?);
    schedule.write_csv(&mut f).context("writing temperature table")?;
    f.flush().context("writing temperature table")?;
    write_json(&out.join("config.json"), config)?;

    Ok(["model.json", "model.bin", "train_log.jsonl", "temperatures.csv", "config.json"]
        .map(String::from)
        .to_vec())
}

pub fn run(args: TrainArgs, argv: Vec<String>) -> CliResult {
    let config = args.overrides.resolve()?;
    let (train_path, aux_path) = args.data.paths()?;
    let outputs = train_into(
        &args.out,
        &config,
        &train_path,
        &aux_path,
        args.data.classes,
        args.resume.as_deref(),
        true,
    )?;
    let mut m = ManifestBuilder::new("train", argv, &args.out);
    m.input(&train_path)?.input(&aux_path)?;
    if let Some(p) = &args.overrides.config {
        m.input(p)?;
    }
    if let Some(p) = &args.resume {
        m.input(p)?;
        m.input(&p.with_extension("bin"))?;
    }
    for o in outputs {
        m.output(o);
    }
    m.label(run_label(&config))
        .seeds(vec![config.seed])
        .config(serde_json::to_value(&config)?);
    m.write()?;
    println!("checkpoint written to {}", args.out.join("model.json").display());
    Ok(())
}
