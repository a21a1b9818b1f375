//! The `ssc` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 training error.

mod args;
mod commands;
mod manifest;

use std::ffi::OsString;
use std::path::Path;

use clap::{ArgAction, CommandFactory, Parser};
use thiserror::Error;

pub use args::{AggregateArgs, AttnArgs, Cli, Command, EvalArgs, GenArgs, GenKind, SummarizeArgs, TrainArgs, VocabArgs};
pub use manifest::{blob_hash, InputFile, RunManifest};

use crate::checkpoint::CheckpointError;
use crate::corpus::CorpusError;
use crate::model::ModelError;
use crate::seqpack::PackError;
use crate::trainer::TrainError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Training(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 1,
            Self::Data(_) => 2,
            Self::Training(_) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<PackError> for CliError {
    fn from(e: PackError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Model(m) => m.into(),
            e => Self::Data(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Spec(_) => Self::Usage(e.to_string()),
            ModelError::Encoder(crate::encoder::EncoderError::Config(_)) => Self::Usage(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => Self::Usage(e.to_string()),
            TrainError::EmptySplit(_) => Self::Data(e.to_string()),
            TrainError::Model(m) if !m.is_non_finite() => m.into(),
            e => Self::Training(e.to_string()),
        }
    }
}

/// Reads `key=value` lines into `(flag name, arguments)` pairs. Blank
/// lines and `#` comments are skipped; boolean flags take `true` or
/// `false`.
pub fn config_file_args(path: &Path, subcommand: &str) -> Result<Vec<(String, Vec<OsString>)>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let root = Cli::command();
    let sub = root
        .find_subcommand(subcommand)
        .ok_or_else(|| CliError::Usage(format!("unknown command {subcommand}")))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: String| CliError::Usage(format!("{}:{}: {msg}", path.display(), i + 1));
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("expected key=value, got {line:?}")))?;
        let (key, value) = (key.trim().replace('_', "-"), value.trim());
        if key == "config" {
            return Err(bad("config files cannot include other config files".into()));
        }
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()))
            .ok_or_else(|| bad(format!("unknown option {key} for {subcommand}")))?;
        let flag = OsString::from(format!("--{key}"));
        let args = if matches!(arg.get_action(), ArgAction::SetTrue) {
            match value {
                "true" => vec![flag],
                "false" => vec![],
                _ => return Err(bad(format!("{key} takes true or false, got {value:?}"))),
            }
        } else {
            std::iter::once(flag).chain(value.split_whitespace().map(OsString::from)).collect()
        };
        out.push((key, args));
    }
    Ok(out)
}

/// Splices flags from `--config` after the subcommand, leaving out any
/// flag also given on the command line.
fn expand_config(raw: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let mut config = None;
    for (i, a) in raw.iter().enumerate() {
        let s = a.to_string_lossy();
        if s == "--config" {
            config = raw.get(i + 1).cloned();
        } else if let Some(v) = s.strip_prefix("--config=") {
            config = Some(v.into());
        }
    }
    let Some(config) = config else {
        return Ok(raw);
    };
    let names: Vec<String> = Cli::command().get_subcommands().map(|c| c.get_name().to_string()).collect();
    let Some(pos) = raw
        .iter()
        .position(|a| names.iter().any(|n| a.to_string_lossy() == *n))
    else {
        return Ok(raw);
    };
    let sub = raw[pos].to_string_lossy().into_owned();
    let given: Vec<String> = raw[pos + 1..]
        .iter()
        .filter_map(|a| {
            let s = a.to_string_lossy();
            let name = s.strip_prefix("--")?;
            Some(name.split('=').next().unwrap_or(name).to_string())
        })
        .collect();
    let mut out = raw[..=pos].to_vec();
    for (key, args) in config_file_args(Path::new(&config), &sub)? {
        if !given.contains(&key) {
            out.extend(args);
        }
    }
    out.extend_from_slice(&raw[pos + 1..]);
    Ok(out)
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code.
pub fn main_with_args(args: impl IntoIterator<Item = OsString>) -> i32 {
    let args = match expand_config(args.into_iter().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match commands::run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
