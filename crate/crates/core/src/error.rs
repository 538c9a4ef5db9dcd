use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("edge references unknown agent {0:?}")]
    UnknownAgent(String),
    #[error("edge references unknown task type {0:?}")]
    UnknownTaskType(String),
    #[error("instance is invalid: {0}")]
    Invalid(String),
    #[error("malformed document: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Error)]
pub enum LpError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("agent {0:?} has a zero rejection budget; normalize the instance first")]
    ZeroBudget(String),
    #[error("offline LP is infeasible")]
    Infeasible,
    #[error("offline LP is unbounded")]
    Unbounded,
    #[error("LP solver failed: {0}")]
    Solver(String),
    #[error("LP objective {objective} exceeds the trivial bound {bound}")]
    BoundExceeded { objective: f64, bound: f64 },
    #[error("solution does not match the instance: {0}")]
    Mismatch(String),
    #[error("{0}")]
    NotApplicable(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum DecompositionError {
    #[error("coordinate {index} = {value} lies outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("coordinates sum to {sum}, above capacity {capacity}")]
    OverCapacity { sum: f64, capacity: u32 },
    #[error("capacity must be at least 1")]
    ZeroCapacity,
    #[error("task type {task_type} at slot {slot}: {source}")]
    Slot {
        task_type: usize,
        slot: usize,
        #[source]
        source: Box<DecompositionError>,
    },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PolicyError {
    #[error("decision queried with an exhausted budget")]
    ExhaustedBudget,
    #[error("unknown policy {0:?} (expected proposed, nadap, greedy or random)")]
    UnknownPolicy(String),
    #[error("policy {policy} assigned agent {agent} at slot {slot}: {reason}")]
    InvalidAssignment {
        policy: String,
        agent: usize,
        slot: usize,
        reason: &'static str,
    },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OracleError {
    #[error("{what} has {size} states, above the guard {limit}")]
    TooLarge {
        what: &'static str,
        size: u128,
        limit: u128,
    },
    #[error("sequence length {got} does not match horizon {horizon}")]
    BadSequence { got: usize, horizon: usize },
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("not enough distinct {dimension}: found {found}, need {needed}")]
    InsufficientData {
        dimension: &'static str,
        found: usize,
        needed: usize,
    },
    #[error("bad trip record on line {line}: {reason}")]
    BadRecord { line: usize, reason: String },
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Failure while solving and tabulating an instance for simulation.
#[derive(Debug, Error)]
pub enum PrepareError {
    #[error("invalid instance: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<crate::model::Violation>),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Decomposition(#[from] DecompositionError),
}
