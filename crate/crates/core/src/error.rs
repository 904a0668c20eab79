use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("dimension mismatch: expected ({expected_n}, {expected_m}), got ({got_n}, {got_m})")]
    DimensionMismatch {
        expected_n: usize,
        expected_m: usize,
        got_n: usize,
        got_m: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("weight {index} is not positive ({value})")]
    NonPositiveWeight { index: usize, value: f64 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("unsupported order p = {0} without a user-supplied extension")]
    UnsupportedOrder(u32),
    #[error("linear system is singular: {0}")]
    Singular(&'static str),
    #[error("inner solve failed: {0}")]
    InnerSolveFailed(String),
    #[error("iteration budget exceeded after {0} iterations")]
    BudgetExceeded(usize),
    #[error("instance has no closed-form best responses")]
    NoClosedForm,
    #[error("no reference solution and no user bound for R")]
    MissingBound,
    #[error("oracle evaluation failed: {0}")]
    Oracle(String),
}

pub type Result<T, E = SolverError> = std::result::Result<T, E>;
