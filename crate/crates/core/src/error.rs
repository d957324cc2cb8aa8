use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// `a` has no inverse modulo `m`; in a congruence system this means the
    /// moduli are not pairwise coprime.
    #[error("{a} is not invertible modulo {m} (gcd = {gcd})")]
    NotInvertible { a: u64, m: u64, gcd: u64 },

    #[error("frequency {freq_hz} Hz lies outside the unambiguous window ±{limit_hz} Hz")]
    OutOfWindow { freq_hz: f64, limit_hz: f64 },

    #[error("no unfolding candidate within ±{limit_hz} Hz")]
    WindowExceeded { limit_hz: f64 },

    #[error("quadrature did not converge: estimate {estimate}, error bound {error_bound}")]
    Convergence { estimate: f64, error_bound: f64 },

    #[error("numerical domain error: {0}")]
    NumericalDomain(String),

    #[error("no detection in channel {channel}: peak/median {ratio:.3} below threshold")]
    NoDetection { channel: usize, ratio: f64 },

    #[error("invalid configuration field `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("failed to parse configuration at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
