use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use ltood_core::data::longtail_counts;
use ltood_core::{ClassProfile, TemperatureSchedule, Variant};

use crate::files::{ensure_dir, write_text};
use crate::manifest::ManifestBuilder;
use crate::{CliError, CliResult};

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Explicit comma-separated class counts, largest first.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["classes", "n_max", "rho"])]
    pub counts: Option<Vec<usize>>,
    /// Number of classes of a generated long-tailed profile.
    #[arg(long = "C", visible_alias = "classes", default_value_t = 10)]
    pub classes: usize,
    /// Largest class count of a generated profile.
    #[arg(long, default_value_t = 5000)]
    pub n_max: usize,
    /// Imbalance ratio of a generated profile.
    #[arg(long, default_value_t = 100.0)]
    pub rho: f64,
    /// Total epochs E.
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    /// Base temperature.
    #[arg(long, default_value_t = 0.1)]
    pub tau: f64,
    /// Schedule shape: sqrt or linear.
    #[arg(long, default_value = "sqrt")]
    pub variant: Variant,
}

pub fn run(args: ScheduleArgs, argv: Vec<String>) -> CliResult {
    let counts = match &args.counts {
        Some(c) if c.is_empty() => return Err(CliError::usage("--counts is empty")),
        Some(c) => c.clone(),
        None => longtail_counts(args.classes, args.n_max, args.rho)?,
    };
    let normalized = ClassProfile::new(counts.clone(), 0.0)?.normalized().to_vec();
    let schedule = TemperatureSchedule::new(args.tau, args.epochs, args.variant, normalized.clone())?;
    ensure_dir(&args.out)?;
    let mut buf = Vec::new();
    schedule.write_csv(&mut buf)?;
    write_text(&args.out.join("temperatures.csv"), &String::from_utf8_lossy(&buf))?;
    let mut profile = String::from("class,count,normalized\n");
    for (c, (n, h)) in counts.iter().zip(&normalized).enumerate() {
        let _ = writeln!(profile, "{},{n},{h:?}", c + 1);
    }
    write_text(&args.out.join("profile.csv"), &profile)?;
    let mut m = ManifestBuilder::new("schedule", argv, &args.out);
    m.output("temperatures.csv").output("profile.csv");
    m.write()?;
    println!("wrote {}", args.out.join("temperatures.csv").display());
    Ok(())
}
