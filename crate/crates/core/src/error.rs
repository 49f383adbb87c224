use thiserror::Error;

/// Errors raised by the seeking library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("graph is not strongly connected")]
    NotStronglyConnected,

    #[error("Lyapunov system is numerically singular")]
    SingularLyapunov,

    #[error("matrix is not Hurwitz")]
    NotHurwitz,

    #[error("companion matrix needs order n >= 2")]
    EmptyGains,

    #[error("linear system is singular")]
    SingularSystem,

    #[error("Nash solver did not converge after {iterations} iterations (|F|inf = {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("state diverged at t = {t}")]
    Diverged { t: f64 },

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("fit window contains fewer than two samples")]
    EmptyWindow,

    #[error("error norm is not positive at t = {t}; log fit undefined")]
    NonPositiveError { t: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}
