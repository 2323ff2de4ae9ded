use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("{0} is singular")]
    Singular(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// The acceptance set was never hit. `acceptance_upper` is a rule-of-three
    /// 95% upper bound on the acceptance probability.
    #[error(
        "rerandomization gave up after {attempts} attempts \
         (acceptance probability below {acceptance_upper:.3e})"
    )]
    RejectionCap { attempts: u64, acceptance_upper: f64 },

    #[error("C({n}, {n1}) = {count} assignments exceeds the enumeration limit {limit}")]
    TooManyAssignments {
        n: usize,
        n1: usize,
        count: u128,
        limit: u128,
    },

    #[error("data format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
