use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{block} is singular (min eigenvalue {min_eigenvalue:e})")]
    SingularBlock { block: String, min_eigenvalue: f64 },

    #[error("feasibility projection did not converge after {cycles} cycles (residual {residual:e})")]
    ProjectionNotConverged { residual: f64, cycles: usize },

    #[error("objective became non-finite at iteration {iteration}")]
    NonFiniteObjective { iteration: usize },

    #[error("brute-force oracle does not support this instance: {0}")]
    OracleUnsupported(String),

    #[error("filter step t={t}: {source}")]
    AtStep {
        t: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("method {method}, run {run}, step t={t}: {source}")]
    InRun {
        method: String,
        run: usize,
        t: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn singular(block: impl Into<String>, min_eigenvalue: f64) -> Self {
        Error::SingularBlock {
            block: block.into(),
            min_eigenvalue,
        }
    }

    /// Attaches a filter time index.
    pub fn at_step(self, t: usize) -> Self {
        Error::AtStep {
            t,
            source: Box::new(self),
        }
    }

    /// True for failures of the numerics (as opposed to bad input or configuration).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::SingularBlock { .. }
            | Error::ProjectionNotConverged { .. }
            | Error::NonFiniteObjective { .. } => true,
            Error::AtStep { source, .. } | Error::InRun { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
