//! `tofg`: scenario generation, graph export, training, prediction,
//! closed-loop evaluation and attention export.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use tofg::model::ModelError;
use tofg::nn::NnError;
use tofg::scene::{ScenarioKind, SceneError};
use tofg::simulator::SimError;

#[derive(Debug, Parser)]
#[command(name = "tofg", version, about = "Temporal occupancy flow graphs and the TOFG-GAT planner")]
pub struct Cli {
    /// Seed for every random choice; overrides the seeds in the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for batch work (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// JSON settings with optional sections graph, model, train, sim, metrics.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic scenarios `<kind>-<seed>.json` for seeds `seed..seed+count`.
    GenScenarios {
        #[arg(long, value_parser = parse_kind)]
        kind: ScenarioKind,
        #[arg(long)]
        count: usize,
    },
    /// Build a TOFG over a frame range and write it as JSON.
    BuildGraph {
        scenario: PathBuf,
        /// Inclusive frame range `first:last`; defaults to every frame.
        #[arg(long, value_parser = parse_frames)]
        frames: Option<(i64, i64)>,
    },
    /// Train a model on scenario files or directories of them.
    Train {
        #[arg(required = true)]
        data: Vec<PathBuf>,
    },
    /// Predict the ego trajectory at one frame.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        scenario: PathBuf,
        /// Last observed frame; defaults to the first frame with a full history.
        #[arg(long)]
        frame: Option<i64>,
    },
    /// Closed-loop evaluation over scenario files or directories.
    Simulate {
        #[arg(required = true)]
        scenarios: Vec<PathBuf>,
        #[command(flatten)]
        planner: PlannerArgs,
        /// Also write one trace JSON per scenario.
        #[arg(long)]
        traces: bool,
    },
    /// Write the last frame's cross-attention weights as CSV.
    ExportAttention {
        #[arg(long)]
        checkpoint: PathBuf,
        scenario: PathBuf,
        #[arg(long)]
        frame: Option<i64>,
    },
    /// Print the effective configuration.
    Config,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct PlannerArgs {
    /// Reference planner instead of a model.
    #[arg(long, value_enum)]
    pub planner: Option<PlannerKind>,
    /// Model checkpoint to plan with.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlannerKind {
    /// Replays the logged ego future.
    Oracle,
    Stationary,
    ConstantSpeed,
}

fn parse_kind(s: &str) -> Result<ScenarioKind, String> {
    s.parse()
}

fn parse_frames(s: &str) -> Result<(i64, i64), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected first:last, got {s:?}"))?;
    let a: i64 = a.trim().parse().map_err(|e| format!("{a:?}: {e}"))?;
    let b: i64 = b.trim().parse().map_err(|e| format!("{b:?}: {e}"))?;
    if a > b {
        return Err(format!("empty frame range {a}:{b}"));
    }
    Ok((a, b))
}

/// Failure classes mapped to process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Failure {
    Other = 1,
    Usage = 2,
    Validation = 3,
    Io = 4,
    Numeric = 5,
}

/// A usage mistake detected after argument parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn nn_class(e: &NnError) -> Failure {
    match e {
        NnError::NonFinite(_) => Failure::Numeric,
        NnError::Io { .. } => Failure::Io,
        _ => Failure::Validation,
    }
}

fn model_class(e: &ModelError) -> Failure {
    match e {
        ModelError::Nn(n) => nn_class(n),
        ModelError::Io(_) => Failure::Io,
        _ => Failure::Validation,
    }
}

pub fn classify(err: &anyhow::Error) -> Failure {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return Failure::Usage;
        }
        if cause.is::<std::io::Error>() {
            return Failure::Io;
        }
        if let Some(e) = cause.downcast_ref::<SceneError>() {
            return if matches!(e, SceneError::Io { .. }) { Failure::Io } else { Failure::Validation };
        }
        if let Some(e) = cause.downcast_ref::<NnError>() {
            return nn_class(e);
        }
        if let Some(e) = cause.downcast_ref::<ModelError>() {
            return model_class(e);
        }
        if let Some(e) = cause.downcast_ref::<SimError>() {
            return match e {
                SimError::Model(m) => model_class(m),
                _ => Failure::Validation,
            };
        }
        if cause.is::<tofg::graph::GraphError>()
            || cause.is::<tofg::metrics::MetricsError>()
            || cause.is::<serde_json::Error>()
        {
            return Failure::Validation;
        }
    }
    Failure::Other
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { Failure::Usage as u8 } else { 0 });
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(classify(&e) as u8)
        }
    }
}
