use thiserror::Error;

/// Errors raised anywhere in the library.
///
/// Variants split roughly into caller mistakes (`Domain`, `Dimension`,
/// `Constraint`, `Invalid`) and numerical failures (`NonConvergence`,
/// `ZeroProbability`, `Resource`). The CLI maps the first group to exit
/// code 2 and the second to exit code 3.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error in {func}: {msg}")]
    Domain { func: &'static str, msg: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("constraint violated on row {row}: {msg}")]
    Constraint { row: usize, msg: String },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("{func} did not converge after {iterations} iterations ({detail})")]
    NonConvergence {
        func: &'static str,
        iterations: usize,
        detail: String,
    },

    #[error("zero probability at step {step}")]
    ZeroProbability { step: usize },

    #[error("resource cap exceeded: {0}")]
    Resource(String),
}

impl Error {
    pub(crate) fn domain(func: &'static str, msg: impl Into<String>) -> Self {
        Error::Domain {
            func,
            msg: msg.into(),
        }
    }

    /// `true` for failures caused by bad input rather than numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Domain { .. } | Error::Dimension(_) | Error::Constraint { .. } | Error::Invalid(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
