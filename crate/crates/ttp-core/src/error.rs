use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum TtpError {
    /// Malformed instance, tour, plan, or model text. `line` is 1-based.
    Parse { line: usize, msg: String },
    /// A caller-supplied value violates a documented precondition.
    InvalidArgument(String),
    /// A packing plan does not fit the knapsack.
    CapacityExceeded { weight: u64, capacity: u64 },
    /// The DP table would exceed the work budget; use the greedy bound instead.
    WorkBudgetExceeded { cells: u128, budget: u128 },
    /// A parameter model has no entry for the requested combination.
    ModelMissing(String),
    /// The expression contains an operator outside the polynomial subset.
    UnsupportedExpansion(String),
}

impl fmt::Display for TtpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TtpError::Parse { line, msg } => write!(f, "parse error at line {line}: {msg}"),
            TtpError::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            TtpError::CapacityExceeded { weight, capacity } => {
                write!(f, "plan weight {weight} exceeds capacity {capacity}")
            }
            TtpError::WorkBudgetExceeded { cells, budget } => write!(
                f,
                "dp table needs {cells} cells, over the {budget} budget; fall back to kp_greedy"
            ),
            TtpError::ModelMissing(what) => write!(f, "parameter model has no entry for {what}"),
            TtpError::UnsupportedExpansion(what) => {
                write!(f, "cannot expand non-polynomial expression: {what}")
            }
        }
    }
}

impl std::error::Error for TtpError {}

pub type Result<T> = std::result::Result<T, TtpError>;
