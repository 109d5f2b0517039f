use std::fmt;

use thiserror::Error;

/// A single violated scenario invariant, with its location.
#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioIssue {
    NoSources,
    TooFewStates { source: usize, n_states: usize },
    ShapeMismatch { source: usize, matrix: &'static str, expected: usize },
    ProbabilityOutOfRange { source: usize, row: usize, col: usize, value: f64 },
    RowSum { source: usize, row: usize, sum: f64 },
    NegativeCost { source: usize, row: usize, col: usize, value: f64 },
    NonzeroDiagonal { source: usize, index: usize, value: f64 },
    BadWeight { source: usize, value: f64 },
    BadChannel { p_success: f64, delay: u8 },
    BadBudget { f_max: f64 },
}

// Source indices are reported 1-based, matching documents and CLI output.
impl fmt::Display for ScenarioIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NoSources => write!(f, "scenario has no sources"),
            Self::TooFewStates { source, n_states } => {
                write!(f, "source {}: {} states, need at least 2", source + 1, n_states)
            }
            Self::ShapeMismatch { source, matrix, expected } => write!(
                f,
                "source {}: {} matrix is not {}x{}",
                source + 1,
                matrix,
                expected,
                expected
            ),
            Self::ProbabilityOutOfRange { source, row, col, value } => write!(
                f,
                "source {}: transition[{}][{}] = {} is outside [0,1]",
                source + 1,
                row + 1,
                col + 1,
                value
            ),
            Self::RowSum { source, row, sum } => write!(
                f,
                "source {}: transition row {} sums to {} (expected 1)",
                source + 1,
                row + 1,
                sum
            ),
            Self::NegativeCost { source, row, col, value } => write!(
                f,
                "source {}: cae[{}][{}] = {} is negative",
                source + 1,
                row + 1,
                col + 1,
                value
            ),
            Self::NonzeroDiagonal { source, index, value } => write!(
                f,
                "source {}: cae[{}][{}] = {} must be 0",
                source + 1,
                index + 1,
                index + 1,
                value
            ),
            Self::BadWeight { source, value } => {
                write!(f, "source {}: weight {} must be finite and >= 0", source + 1, value)
            }
            Self::BadChannel { p_success, delay } => write!(
                f,
                "channel: p_success {} must lie in [0,1] and delay {} in {{0,1}}",
                p_success, delay
            ),
            Self::BadBudget { f_max } => write!(f, "f_max {} is outside (0,1]", f_max),
        }
    }
}

/// Every invariant a raw scenario violates.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationErrors(pub Vec<ScenarioIssue>);

impl fmt::Display for ValidationErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join("; "))
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid scenario: {0}")]
    Invalid(ValidationErrors),

    #[error("state space has {states} states, above the ceiling of {ceiling}")]
    Capacity { states: u128, ceiling: u128 },

    #[error("policy-induced chain has {} closed classes", classes.len())]
    Multichain { classes: Vec<Vec<usize>> },

    #[error("stationary solve failed: residual {residual:e}")]
    StationarySolve { residual: f64 },

    #[error("no convergence after {iterations} iterations (last change {last_change:e})")]
    NonConvergence { iterations: usize, last_change: f64 },

    #[error("F at lambda_max = {lambda_max} is {f}, above f_max = {f_max}")]
    BadBracket { lambda_max: f64, f: f64, f_max: f64 },

    #[error("anchors share slope F = {f}; no intersection at lambda = {lambda}")]
    DegenerateSlope { lambda: f64, f: f64 },

    #[error("cannot mix: need F_plus <= f_max <= F_minus with F_minus > F_plus (F_minus = {f_minus}, F_plus = {f_plus}, f_max = {f_max})")]
    InfeasiblePair { f_minus: f64, f_plus: f64, f_max: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
