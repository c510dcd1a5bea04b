use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what}: expected length {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// `(η₁+1)sᵢ² + η₂ ≤ 0` on a mode with nonzero singular value.
    #[error("unstable weights at mode {mode} (s = {singular}): (eta1+1)*s^2 + eta2 = {denominator}")]
    Unstable {
        mode: usize,
        singular: f64,
        denominator: f64,
    },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("non-finite state at step {step}")]
    NonFinite { step: usize },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("image format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_len(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            what,
            expected,
            actual,
        });
    }
    Ok(())
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
