use thiserror::Error;

/// Errors produced by the library.
///
/// The variants map onto the three outcome classes the CLI distinguishes:
/// validation problems (bad input), numerical failures (the solver could not
/// decide), and certification impossibility (the input is well formed but no
/// certificate can exist, e.g. an unstabilizable pair).
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("plant is not Hurwitz (max real eigenvalue {0:.3e})")]
    NotHurwitz(f64),
    #[error("certification impossible: {0}")]
    CertificationImpossible(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors that stem from malformed or inconsistent input.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Dimension(_) | Error::Validation(_) | Error::NotHurwitz(_) | Error::Json(_) | Error::Io(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err(what: impl Into<String>) -> Error {
    Error::Dimension(what.into())
}

pub(crate) fn invalid(what: impl Into<String>) -> Error {
    Error::Validation(what.into())
}
