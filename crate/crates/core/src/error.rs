use thiserror::Error;

/// Errors raised by the estimation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// `cosh(x/a)` would overflow, or the sag parameter is not a positive finite number.
    #[error("catenary evaluation out of domain: x/a = {ratio} (a = {a})")]
    Domain { ratio: f64, a: f64 },

    #[error("invalid argument: {0}")]
    Argument(String),

    /// The cost is not finite at the (projected) starting point of a local solve.
    #[error("non-finite cost at start point {start:?}")]
    NonFiniteStart { start: Vec<f64> },

    /// Every start of a multi-start estimate failed.
    #[error("all {} solver starts failed: {}", failures.len(), failures.join("; "))]
    AllStartsFailed { failures: Vec<String> },

    #[error("frame {frame}: {source}")]
    Frame {
        frame: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn argument(msg: impl Into<String>) -> Error {
    Error::Argument(msg.into())
}
