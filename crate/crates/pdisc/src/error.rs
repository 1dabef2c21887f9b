use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid size: {0}")]
    Size(String),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("LP infeasible: basic variable {variable} cannot reach its bound (gap {gap:e})")]
    LpInfeasible {
        variable: usize,
        gap: f64,
        /// Nonnegative margin-row weights `y`: `y^T X theta >= y^T b` has no solution in the box.
        certificate: Vec<f64>,
    },
    #[error("LP solver stopped after {0} iterations")]
    LpIterationLimit(usize),
    #[error("schedule precondition failed in round {round}: {detail}")]
    Schedule { round: usize, detail: String },
    #[error("round {round}: no successful partial colouring in {retries} attempts")]
    RetryExhausted { round: usize, retries: usize },
    #[error("ODE horizon exceeded: {0}")]
    Horizon(String),
    #[error("degenerate state: {0}")]
    Degenerate(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("no convergence: {0}")]
    NoConvergence(String),
    #[error("regime not desk-feasible: {0}")]
    NotDeskFeasible(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// Whether the error reflects an infeasible problem or violated
    /// precondition, as opposed to an internal or I/O failure.
    pub fn is_precondition(&self) -> bool {
        matches!(
            self,
            Error::Infeasible(_)
                | Error::LpInfeasible { .. }
                | Error::Schedule { .. }
                | Error::RetryExhausted { .. }
                | Error::NotDeskFeasible(_)
                | Error::Domain(_)
                | Error::InvalidArgument(_)
                | Error::Size(_)
                | Error::LengthMismatch { .. }
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
