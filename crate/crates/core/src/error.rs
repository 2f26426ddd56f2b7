use thiserror::Error;

/// Errors raised by the accountant.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument fell outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The NP-curve route and the direct summation disagreed.
    #[error(
        "renyi routes disagree at lambda={lambda}: direct {direct:e} vs curve {curve:e} \
         (tolerance {tolerance:e})"
    )]
    Consistency {
        lambda: f64,
        direct: f64,
        curve: f64,
        tolerance: f64,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
