use thiserror::Error;

/// Failure modes shared by every module of the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("numerical degeneracy: {0}")]
    NumericalDegeneracy(String),
    #[error("solution blew up at cell {cell} (state norm {norm:e})")]
    BlowUp { cell: usize, norm: f64 },
    #[error("divergent integral: {0}")]
    Divergence(String),
    #[error("capability exceeded: {0}")]
    Capability(String),
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("kernel starvation: {0}")]
    Starvation(String),
    #[error("diagnostic failure: {0}")]
    Diagnostic(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
