//! Command-line orchestration: data generation, training, tuning, sweeps,
//! prediction, decoding, evaluation and map rendering.
//!
//! Exit codes: 0 success, 1 other failure, 2 invalid flags or config,
//! 3 data generation failure, 4 training divergence, 5 missing checkpoint or
//! run directory, 6 prediction/truth misalignment.

use std::fmt;

use clap::{Parser, Subcommand};

pub mod common;
pub mod data;
pub mod fit;
pub mod infer;
pub mod manifest;
pub mod report;
pub mod rundir;

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_GENERATION: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;
pub const EXIT_CHECKPOINT: i32 = 5;
pub const EXIT_ALIGNMENT: i32 = 6;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub error: anyhow::Error,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl From<anyhow::Error> for CliError {
    fn from(error: anyhow::Error) -> Self {
        Self {
            code: EXIT_FAILURE,
            error,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Tags an error with the exit code it should produce.
pub trait WithCode<T> {
    fn code(self, code: i32) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> WithCode<T> for Result<T, E> {
    fn code(self, code: i32) -> CliResult<T> {
        self.map_err(|e| CliError { code, error: e.into() })
    }
}

pub fn fail<T>(code: i32, msg: impl fmt::Display) -> CliResult<T> {
    Err(CliError {
        code,
        error: anyhow::anyhow!("{msg}"),
    })
}

#[derive(Debug, Parser)]
#[command(name = "phaseforge", version, about = "Phase-set prediction over composition and temperature")]
pub struct Cli {
    /// Worker threads for seeds, trials and grid chunks.
    #[arg(long, global = true, env = "PHASEFORGE_JOBS", default_value_t = 1,
          value_parser = clap::value_parser!(u16).range(1..))]
    pub jobs: u16,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Label a composition-temperature sampling plan with the oracle and split it.
    GenData(data::GenDataArgs),
    /// Re-split an existing dataset.
    Split(data::SplitArgs),
    /// Train one model per seed into a run directory.
    Train(fit::TrainArgs),
    /// Random search over hyperparameters.
    Tune(fit::TuneArgs),
    /// Fixed-length runs over a grid of penalty weights.
    Sweep(fit::SweepArgs),
    /// Ensemble the run's checkpoints over a grid or a points file.
    Predict(infer::PredictArgs),
    /// Apply the feasibility projection to a prediction file.
    Decode(infer::DecodeArgs),
    /// Score predictions against a dataset or the oracle.
    Eval(report::EvalArgs),
    /// Render a multiplicity or match map as PPM.
    Render(report::RenderArgs),
}

pub fn run(cli: Cli) -> CliResult<()> {
    let jobs = cli.jobs as usize;
    match cli.command {
        Command::GenData(a) => data::gen_data(&a),
        Command::Split(a) => data::split(&a),
        Command::Train(a) => fit::train(&a, jobs),
        Command::Tune(a) => fit::tune(&a, jobs),
        Command::Sweep(a) => fit::sweep(&a, jobs),
        Command::Predict(a) => infer::predict(&a, jobs),
        Command::Decode(a) => infer::decode(&a),
        Command::Eval(a) => report::eval(&a, jobs),
        Command::Render(a) => report::render(&a, jobs),
    }
}
