use std::fmt;

use thiserror::Error;

use crate::architecture::Violation;

/// A single configuration problem, located by its dotted field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub path: String,
    pub reason: String,
}

impl ConfigIssue {
    pub fn new(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.reason)
    }
}

fn join_issues(issues: &[ConfigIssue]) -> String {
    issues
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

fn join_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Error)]
pub enum Error {
    /// Bad numeric input to a pure operation.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// An operation was called outside its precondition.
    #[error("usage error: {0}")]
    Usage(String),

    /// One or more configuration problems, all reported together.
    #[error("configuration error: {}", join_issues(.0))]
    Config(Vec<ConfigIssue>),

    #[error("topology violates architecture constraints: {}", join_violations(.0))]
    Topology(Vec<Violation>),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialize(String),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config(vec![ConfigIssue::new(path, reason)])
    }
}

pub type Result<T> = std::result::Result<T, Error>;
