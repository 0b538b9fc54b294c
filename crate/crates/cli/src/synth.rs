use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use ltood_core::data::{save_dataset_csv, save_pool_csv};
use ltood_core::BenchmarkConfig;

use crate::files::{ensure_dir, read_json, write_json, write_text};
use crate::manifest::ManifestBuilder;
use crate::CliResult;

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Benchmark configuration JSON; flags below override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of ID classes.
    #[arg(long = "C", visible_alias = "classes")]
    pub classes: Option<usize>,
    /// Training samples of the largest class.
    #[arg(long)]
    pub n_max: Option<usize>,
    /// Imbalance ratio n_max / n_min (>= 1).
    #[arg(long)]
    pub rho: Option<f64>,
    /// Fraction of classes treated as tail.
    #[arg(long)]
    pub k: Option<f64>,
    /// Feature dimension.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Distance of class means from the origin.
    #[arg(long)]
    pub radius: Option<f64>,
    /// Per-class standard deviation.
    #[arg(long)]
    pub class_std: Option<f64>,
    /// Balanced test samples per class.
    #[arg(long)]
    pub test_per_class: Option<usize>,
    /// Auxiliary training outliers per generator kind.
    #[arg(long)]
    pub aux_per_kind: Option<usize>,
    /// Samples in each OOD test pool.
    #[arg(long)]
    pub ood_test_size: Option<usize>,
    /// Random seed.
    #[arg(long, env = "LTOOD_SEED")]
    pub seed: Option<u64>,
}

impl SynthArgs {
    pub fn resolve(&self) -> CliResult<BenchmarkConfig> {
        let mut c: BenchmarkConfig = match &self.config {
            Some(p) => read_json(p)?,
            None => BenchmarkConfig::default(),
        };
        macro_rules! set {
            ($($f:ident => $g:ident),*) => { $( if let Some(v) = self.$f { c.$g = v; } )* };
        }
        set!(classes => classes, n_max => n_max, rho => imbalance, k => tail_fraction, dim => dim,
             radius => radius, class_std => class_std, test_per_class => test_per_class,
             aux_per_kind => aux_per_kind, ood_test_size => ood_test_size, seed => seed);
        Ok(c)
    }
}

pub fn run(args: SynthArgs, argv: Vec<String>) -> CliResult {
    let config = args.resolve()?;
    // validates the profile before anything touches the disk
    config.profile()?;
    let bench = config.generate()?;
    ensure_dir(&args.out)?;
    let mut m = ManifestBuilder::new("synth", argv, &args.out);
    if let Some(p) = &args.config {
        m.input(p)?;
    }

    let mut counts = String::from("class,count,normalized,group\n");
    for (c, (&n, &h)) in bench.profile.counts().iter().zip(bench.profile.normalized()).enumerate() {
        let group = if bench.profile.is_head(c) { "head" } else { "tail" };
        let _ = writeln!(counts, "{},{n},{h:?},{group}", c + 1);
    }
    write_text(&args.out.join("counts.csv"), &counts)?;
    save_dataset_csv(args.out.join("train.csv"), &bench.train)?;
    save_dataset_csv(args.out.join("test.csv"), &bench.test)?;
    save_pool_csv(args.out.join("aux.csv"), &bench.aux)?;
    let mut names = vec!["counts.csv".to_string(), "train.csv".into(), "test.csv".into(), "aux.csv".into()];
    for (kind, pool) in &bench.ood_tests {
        let name = format!("ood_{kind}.csv");
        save_pool_csv(args.out.join(&name), pool)?;
        names.push(name);
    }
    write_json(&args.out.join("benchmark.json"), &config)?;
    names.push("benchmark.json".into());
    for n in names {
        m.output(n);
    }
    m.seeds(vec![config.seed]).config(serde_json::to_value(&config)?);
    m.write()?;
    println!(
        "wrote {} train / {} test / {} aux samples and {} OOD pools to {}",
        bench.train.len(),
        bench.test.len(),
        bench.aux.len(),
        bench.ood_tests.len(),
        args.out.display()
    );
    Ok(())
}
