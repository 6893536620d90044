use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("operator `{0}` is not C-elliptic; boundary traces are undefined")]
    NotCElliptic(&'static str),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dual field is inadmissible at cell {cell}: conjugate is infinite")]
    InadmissibleCell { cell: usize },

    #[error("dual field is inadmissible at boundary face {face}")]
    InadmissibleFace { face: usize },

    #[error("{what} did not converge after {iterations} iterations")]
    NonConvergence { what: &'static str, iterations: usize },

    #[error("cannot parse integrand id `{id}`: {reason}")]
    IntegrandId { id: String, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter { name, reason: reason.into() }
}
