//! End-to-end runs: load or generate a graph, sample it, estimate the degree
//! counts, score against the truth, and persist plot-ready outputs.
//!
//! Every run writes into its own directory: CSV for vectors and curves, JSON
//! for reports, and a `manifest.json` listing the configuration and files.
//! Outputs are a function of the configuration alone, so re-running a
//! configuration reproduces them byte for byte.

mod commands;
mod config;
mod run;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::Error;

pub use commands::*;
pub use config::*;
pub use run::*;

/// Pipeline stage, used to label failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Graph,
    Sample,
    Operator,
    Covariance,
    Sure,
    Solve,
    Score,
    Diagnostics,
    Output,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Graph => "graph",
            Stage::Sample => "sample",
            Stage::Operator => "operator",
            Stage::Covariance => "covariance",
            Stage::Sure => "sure",
            Stage::Solve => "solve",
            Stage::Score => "score",
            Stage::Diagnostics => "diagnostics",
            Stage::Output => "output",
        }
    }

    pub fn error(self, source: Error) -> PipelineError {
        PipelineError { stage: self, source }
    }

    pub(crate) fn wrap(self) -> impl Fn(Error) -> PipelineError {
        move |source| PipelineError { stage: self, source }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A library error tagged with the stage that raised it.
#[derive(Debug)]
pub struct PipelineError {
    pub stage: Stage,
    pub source: Error,
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} stage failed: {}", self.stage, self.source)
    }
}

impl std::error::Error for PipelineError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

/// Broad failure classes, mapped to process exit codes by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureClass {
    /// Invalid configuration or arguments.
    Config,
    /// Unreadable or malformed input.
    Input,
    /// A numerical stage could not produce a result from valid inputs.
    Numerical,
    /// Results could not be written.
    Output,
}

impl PipelineError {
    pub fn class(&self) -> FailureClass {
        match (&self.source, self.stage) {
            (_, Stage::Output) => FailureClass::Output,
            (Error::Json(_), Stage::Config) => FailureClass::Config,
            (Error::Io(_) | Error::Parse { .. } | Error::Csv(_) | Error::Json(_), _) => FailureClass::Input,
            (_, Stage::Config) => FailureClass::Config,
            (Error::InvalidArgument(_), _) => FailureClass::Config,
            _ => FailureClass::Numerical,
        }
    }
}
