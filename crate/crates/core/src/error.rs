use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("numerical failure{}: {detail}", step.map(|k| format!(" at step {k}")).unwrap_or_default())]
    Numerical { step: Option<usize>, detail: String },

    #[error("iteration did not converge after {iterations} iterations (residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn numerical(detail: impl Into<String>) -> Self {
        Error::Numerical {
            step: None,
            detail: detail.into(),
        }
    }

    /// Attaches a step index to a numerical failure that lacks one.
    pub fn at_step(self, k: usize) -> Self {
        match self {
            Error::Numerical { step: None, detail } => Error::Numerical {
                step: Some(k),
                detail,
            },
            other => other,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Checkpoint(_) | Error::DimensionMismatch { .. } => 2,
            Error::Numerical { .. } | Error::Convergence { .. } => 3,
            Error::Io(_) | Error::Csv(_) => 1,
        }
    }
}

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
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
