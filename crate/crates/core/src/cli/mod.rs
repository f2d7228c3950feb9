//! Command-line front end. Every subcommand accepts `--config FILE`, a JSON
//! object keyed by the subcommand's long flag names in snake case; flags
//! given on the command line take precedence.

mod commands;
mod rmab;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_RUNTIME: u8 = 2;
pub const EXIT_PARTIAL: u8 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Lib(#[from] dpo_pro::Error),
    #[error("{failed} of {total} sweep cells failed")]
    Partial { failed: usize, total: usize },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use dpo_pro::Error as E;
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Partial { .. } => EXIT_PARTIAL,
            CliError::Lib(E::Io { .. } | E::NonFinite { .. } | E::NonIndexable(_)) => EXIT_RUNTIME,
            CliError::Lib(_) => EXIT_CONFIG,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "dpo-pro", version, about = "Preference-robust DPO laboratory")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a synthetic ground-truth task.
    GenTask(commands::GenTaskArgs),
    /// Generate a labelled preference dataset and its hidden-truth sidecar.
    Gen(commands::GenArgs),
    /// Train a policy on a JSONL dataset.
    Train(commands::TrainArgs),
    /// Evaluate a checkpoint against a task.
    Eval(commands::EvalArgs),
    /// Run a methods × noise-level × seed sweep.
    Sweep(commands::SweepArgs),
    /// Restless-bandit environment tools.
    #[command(subcommand)]
    Rmab(rmab::RmabCommand),
    /// Penalty coefficient over q for several radii.
    CoeffCurve(commands::CurveArgs),
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GenTask(a) => commands::gen_task(a),
        Command::Gen(a) => commands::gen(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Rmab(c) => rmab::run(c),
        Command::CoeffCurve(a) => commands::coeff_curve(a),
    }
}

/// Overlays the flags that were given onto the config file's object.
pub(crate) fn with_config<T: Serialize + DeserializeOwned>(flags: T, config: Option<&Path>) -> CliResult<T> {
    let Some(path) = config else {
        return Ok(flags);
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut base: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let base_map = base
        .as_object_mut()
        .ok_or_else(|| CliError::Config(format!("{}: expected a JSON object", path.display())))?;
    let over = serde_json::to_value(&flags).expect("flags serialize");
    for (k, v) in over.as_object().expect("flags form an object") {
        if !v.is_null() {
            base_map.insert(k.clone(), v.clone());
        }
    }
    serde_json::from_value(base).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub(crate) fn required<T>(value: Option<T>, flag: &str) -> CliResult<T> {
    value.ok_or_else(|| CliError::Config(format!("missing required option --{flag}")))
}

pub(crate) fn parse<T: std::str::FromStr>(s: &str, what: &str) -> CliResult<T>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e| CliError::Config(format!("{what}: {e}")))
}

/// Writes to `path`, or to stdout when absent.
pub(crate) fn emit(path: Option<&PathBuf>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => Ok(dpo_pro::trainer::atomic_write(p, text.as_bytes())?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub(crate) fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s
}
