use thiserror::Error;

/// Errors raised by the solver stack.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {what} at stage {stage}")]
    NonFinite { stage: usize, what: &'static str },

    #[error("Hessian modification failed: gamma reached {gamma:e} without certifying definiteness")]
    ModificationFailed { gamma: f64 },

    #[error("linear solver: {0}")]
    LinearSolver(String),

    #[error("subproblem {index} failed the definiteness test; increase mu (currently {mu})")]
    MuTooSmall { index: usize, mu: f64 },

    #[error("direction is not a descent direction of the merit function (slope {slope:e})")]
    NonDescent { slope: f64 },

    #[error("line search failed: stepsize fell below {min_step:e}")]
    LineSearchFailed { min_step: f64 },

    #[error("descent inequality violated: slope {slope:e} > bound {bound:e}")]
    DescentViolation { slope: f64, bound: f64 },

    #[error("penalty adaptation did not restore descent after {0} rounds")]
    AdaptivityFailed(usize),

    #[error("subproblem {index} failed: {reason}")]
    SubproblemFailed { index: usize, reason: String },

    #[error("direction error ratio undefined: exact direction is zero")]
    UndefinedRatio,

    #[error("config: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
