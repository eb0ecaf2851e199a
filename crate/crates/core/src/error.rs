use thiserror::Error;

use crate::identity::IdentityCertificate;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or out-of-contract input: dimension mismatch, bad parameter,
    /// violated bound hypothesis.
    #[error("input error: {0}")]
    Input(String),

    /// A Cholesky pivot was not strictly positive.
    #[error("matrix is not positive definite (pivot {index} = {pivot:e})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    /// A quantity that is nonnegative in exact arithmetic came out
    /// negative beyond rounding tolerance.
    #[error("numerical consistency violated: {0}")]
    NumericalConsistency(String),

    /// The three terms of the loss identity disagree beyond tolerance. The
    /// certificate is kept for inspection.
    #[error(
        "identity residual {:e} exceeds tolerance {:e}",
        .0.residual_pairwise,
        .0.tolerance * .0.scale
    )]
    IdentityViolated(Box<IdentityCertificate>),

    #[error("unsupported: {0}")]
    Unsupported(String),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }
}
