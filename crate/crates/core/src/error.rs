use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("{solver} did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    Convergence {
        solver: &'static str,
        iterations: usize,
        grad_norm: f64,
    },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("bundle field `{field}`: {reason}")]
    Bundle { field: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::DegenerateData(msg.into())
    }

    pub(crate) fn bundle(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Bundle {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for failures that the orchestration layers record as a flagged
    /// NaN cell instead of aborting the run.
    pub fn is_fit_failure(&self) -> bool {
        matches!(
            self,
            Error::DegenerateData(_)
                | Error::Convergence { .. }
                | Error::Singular(_)
                | Error::UndefinedMetric(_)
                | Error::Divergence(_)
        )
    }
}
