use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric fault: {0}")]
    NumericFault(String),

    /// A non-finite particle produced by an integrator step.
    #[error("numeric fault at step {step}, particle {particle}: {reason}")]
    ParticleFault { step: u64, particle: usize, reason: String },

    #[error("certificate violation: {0}")]
    CertificateViolation(String),

    #[error("convergence failure after {iterations} iterations (last residual {residual:e})")]
    ConvergenceFailure {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("in arm `{arm}`: {source}")]
    Arm {
        arm: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::NumericFault(msg.into())
    }

    /// Innermost error, looking through arm wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Arm { source, .. } => source.root(),
            e => e,
        }
    }
}
