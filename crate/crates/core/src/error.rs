use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("graph is not connected ({reachable} of {nodes} nodes reachable from node 1)")]
    Disconnected { nodes: usize, reachable: usize },

    #[error(
        "no connected Erdos-Renyi graph after {attempts} attempts (m={m}, edge_prob={edge_prob}, seed={seed})"
    )]
    RandomGraphExhausted {
        m: usize,
        edge_prob: f64,
        seed: u64,
        attempts: usize,
    },

    #[error("operator norm estimate did not converge after {iterations} iterations (last estimate {estimate})")]
    NormNotConverged { iterations: usize, estimate: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("iterate diverged at outer iteration {k}, inner iteration {t}")]
    Diverged { k: usize, t: usize },

    #[error("iteration cap of {0} exceeded")]
    IterationCap(usize),

    #[error("agent {agent} is missing the payload of neighbor {neighbor}")]
    MissingNeighborPayload { agent: usize, neighbor: usize },

    #[error("agent {agent} received a payload from non-neighbor {sender}")]
    UnexpectedPayload { agent: usize, sender: usize },

    #[error("step parameters violate the convergence condition: {0}")]
    StepCondition(String),

    #[error("schedule value {what} at k={k} is not representable")]
    ScheduleOverflow { what: &'static str, k: usize },

    #[error("probe point outside the domain of the conjugate: {0}")]
    ConjugateDomain(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("replication {replication} (seed {seed}) failed: {source}")]
    Replication {
        replication: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input (configs, files, arguments)
    /// rather than by a solver run.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_)
                | Error::Parse { .. }
                | Error::Io { .. }
                | Error::Json(_)
                | Error::Disconnected { .. }
                | Error::RandomGraphExhausted { .. }
                | Error::DimensionMismatch { .. }
        )
    }
}
