use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Core(#[from] ridge_identity::Error),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Numerical breakdowns count as violations: with `a > 0` they should
    /// never happen.
    pub fn is_violation(&self) -> bool {
        use ridge_identity::Error as E;
        matches!(
            self,
            CliError::Core(E::NotPositiveDefinite { .. } | E::NumericalConsistency(_) | E::IdentityViolated(_))
        )
    }
}
