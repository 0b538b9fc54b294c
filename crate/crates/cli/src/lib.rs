//! `ltood` command-line driver.
//!
//! Every command writes its outputs plus a `manifest.json` into `--out`;
//! `ltood replay <manifest>` re-runs the recorded command and compares the
//! output digests.

use std::ffi::OsString;

use clap::{Parser, Subcommand};

mod ablate;
mod eval;
mod files;
pub mod manifest;
mod plot;
mod replay;
mod schedule;
mod synth;
mod train;

pub use plot::render_svg;

/// Exit status for usage and validation errors.
pub const EXIT_USAGE: i32 = 1;
/// Exit status for failures while running a valid command.
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(e) => write!(f, "error: {e:#}"),
        }
    }
}

impl From<ltood_core::Error> for CliError {
    fn from(e: ltood_core::Error) -> Self {
        use ltood_core::Error as E;
        match e {
            E::InvalidArgument(_)
            | E::LabelOutOfRange { .. }
            | E::Parse { .. }
            | E::BadShape { .. }
            | E::ShapeMismatch { .. } => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.into()),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "ltood", version, about = "Long-tailed OOD detection lab")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic long-tailed benchmark as CSV files.
    Synth(synth::SynthArgs),
    /// Train a model and write a checkpoint plus a JSON-lines log.
    Train(train::TrainArgs),
    /// Score and partition candidate outliers with a trained model.
    Mine(eval::MineArgs),
    /// Evaluate a checkpoint on ID test data and OOD pools.
    Eval(eval::EvalArgs),
    /// Run a sweep of training configurations and compare them.
    Ablate(ablate::AblateArgs),
    /// Render a CSV table as an SVG line plot.
    Plot(plot::PlotArgs),
    /// Write the class-wise temperature table for a class profile.
    Schedule(schedule::ScheduleArgs),
    /// Re-run the command recorded in a manifest and compare outputs.
    Replay(replay::ReplayArgs),
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let argv: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match dispatch(cli.command, argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command, argv: Vec<String>) -> CliResult {
    match command {
        Command::Synth(a) => synth::run(a, argv),
        Command::Train(a) => train::run(a, argv),
        Command::Mine(a) => eval::run_mine(a, argv),
        Command::Eval(a) => eval::run_eval(a, argv),
        Command::Ablate(a) => ablate::run(a, argv),
        Command::Plot(a) => plot::run(a, argv),
        Command::Schedule(a) => schedule::run(a, argv),
        Command::Replay(a) => replay::run(a),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn exit_codes() {
        assert_eq!(run(["ltood", "--help"]), 0);
        assert_eq!(run(["ltood", "bogus"]), EXIT_USAGE);
        assert_eq!(run(["ltood", "schedule", "--out"]), EXIT_USAGE);
    }
}
