use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A size or horizon cap was exceeded.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// `evaluate_conditions` could not meet the sample-complexity condition
    /// below the horizon cap.
    #[error(
        "condition not met by t_max = {t_max}: lambda_min = {lambda_min_at_cap} < required {required}"
    )]
    HorizonCap {
        t_max: usize,
        lambda_min_at_cap: f64,
        required: f64,
    },

    #[error("no convergence: {0}")]
    NonConvergence(String),

    /// Signals a broken numerical invariant, never bad user input.
    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
