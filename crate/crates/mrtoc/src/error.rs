//! Crate-wide error type.

use std::fmt;

/// Errors produced by any operation in this crate.
#[derive(Debug)]
pub enum Error {
    /// A caller violated an operation's contract (bad shape, level out of
    /// range, index out of range, and similar).
    Contract(String),
    /// A non-finite value (NaN or infinity) showed up where the numeric
    /// invariants forbid one.
    Numeric(String),
    /// No coding level satisfies the latency budget. Carries the minimal
    /// latency that would make level 1 feasible.
    Infeasible {
        min_tau: f64,
    },
    /// Training aborted because the loss became non-finite.
    Diverged {
        level: usize,
        epoch: usize,
    },
    /// A configuration file failed to load or validate.
    Config(String),
    /// A dataset file could not be ingested.
    Ingest(String),
    /// A checkpoint or other artifact file is malformed.
    Format(String),
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
            Error::Numeric(msg) => write!(f, "numeric error: {msg}"),
            Error::Infeasible { min_tau } => write!(
                f,
                "no feasible coding level: even level 1 misses the latency budget \
                 (minimal feasible tau is {min_tau} s)"
            ),
            Error::Diverged { level, epoch } => {
                write!(f, "training diverged at level {level}, epoch {epoch}")
            }
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Ingest(msg) => write!(f, "ingestion error: {msg}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
