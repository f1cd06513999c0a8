//! `tpet` command-line front end.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 runtime
//! failure, 3 the mutation engine stopped producing candidates.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{0}")]
    Exhausted(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            Self::Validation(_) => 1,
            Self::Runtime(_) => 2,
            Self::Exhausted(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "tpet", version, about = "Traffic signal control policy lab")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one episode per seed and write event, decision and metrics files.
    Simulate(SimulateArgs),
    /// Evolve policies and write history, best policies and a summary.
    Evolve(EvolveArgs),
    /// Run defect analysis over a decision log.
    Analyze(AnalyzeArgs),
    /// Compare baselines and policy files on identical seeds.
    Compare(CompareArgs),
    /// Generate network and flow files for a grid scenario.
    GenScenario(GenScenarioArgs),
    /// Print the policy language grammar and the state vocabulary.
    Vocab(VocabArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Run configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Episode seed; repeat to give several. Replaces the configured seeds.
    #[arg(long = "seed")]
    pub seeds: Vec<u64>,
    /// Fixes the arrival stream of every simulated episode; seeds then only
    /// vary controller randomness.
    #[arg(long)]
    pub traffic_seed: Option<u64>,
    /// Output directory; defaults to the configured one.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    /// random, fixedtime, maxpressure or policy:<file>.
    #[arg(long, default_value = "maxpressure")]
    pub controller: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EngineChoice {
    Mock,
    Remote,
}

#[derive(Debug, Args)]
pub struct EvolveArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    /// Overrides the configured engine kind.
    #[arg(long, value_enum)]
    pub engine: Option<EngineChoice>,
    /// Overrides the configured number of runs.
    #[arg(long)]
    pub runs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Decision log (JSON lines).
    pub log: PathBuf,
    /// Run configuration supplying the analysis thresholds.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Metrics file of the same episode, shown in the critique header.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Critique JSON path; defaults to `<log stem>.critique.json` beside the log.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    /// Policy file to include; repeatable, added to the configured ones.
    #[arg(long = "policy")]
    pub policies: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenScenarioArgs {
    /// symmetric, asymmetric or surge.
    pub kind: String,
    /// Grid size as ROWSxCOLS, 1x1 up to 4x4.
    #[arg(long, default_value = "1x1")]
    pub grid: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory receiving network.json and flows.json.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with demand parameters; missing fields take defaults.
    #[arg(long)]
    pub params: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VocabArgs {
    /// Run configuration supplying the state thresholds.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Evolve(a) => commands::evolve(&a),
        Command::Analyze(a) => commands::analyze(&a),
        Command::Compare(a) => commands::compare(&a),
        Command::GenScenario(a) => commands::gen_scenario(&a),
        Command::Vocab(a) => commands::vocab(&a),
    }
}
