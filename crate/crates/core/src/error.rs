use thiserror::Error;

use crate::design::AssignmentViolation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("invalid assignment: {0}")]
    InvalidAssignment(AssignmentViolation),

    #[error("invalid sample: {0}")]
    InvalidSample(String),

    #[error("resample budget must be at least 1")]
    ZeroBudget,

    #[error("lag {lag} is out of range for T = {n_times} (need 0 <= lag <= T - 2)")]
    LagOutOfRange { lag: usize, n_times: usize },

    #[error("outcome panel has {found} time columns, expected {expected}")]
    PanelShape { expected: usize, found: usize },

    #[error("invalid p-value {0} (must lie in (0, 1])")]
    InvalidPValue(f64),

    #[error("weight undefined: {0}")]
    UndefinedWeight(String),

    #[error("no usable tests: {0}")]
    NoTests(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(
        "grid does not bracket the interval ({side} side): p-value at grid edge {edge} is {p_edge}; widen the grid"
    )]
    GridNotBracketing {
        side: &'static str,
        edge: f64,
        p_edge: f64,
    },

    #[error("empty interval: lower end {lo} exceeds upper end {hi}")]
    EmptyInterval { lo: f64, hi: f64 },

    #[error("partitions {} and {} are not nested: cells {cell_j:?} and {cell_k:?} overlap without nesting", j + 1, k + 1)]
    NotNested {
        j: usize,
        k: usize,
        cell_j: Vec<usize>,
        cell_k: Vec<usize>,
    },

    #[error("mismatched designs: {0}")]
    MismatchedDesign(String),

    #[error("{0}")]
    Validation(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        match e.kind() {
            csv::ErrorKind::Io(_) => Error::Io(e.to_string()),
            _ => Error::Parse(e.to_string()),
        }
    }
}
