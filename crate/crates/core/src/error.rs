use std::io;

use thiserror::Error;

pub use crate::numerics::NumericsError;

/// Errors raised while decoding the binary dataset and checkpoint formats.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("not a DiffAIL {0}")]
    BadMagic(&'static str),
    #[error("unsupported version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("file is truncated")]
    Truncated,
    #[error("invalid contents: {0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or incompatible inputs.
    #[error("configuration error: {0}")]
    Config(String),
    /// A caller broke an operation's precondition.
    #[error("usage error: {0}")]
    Usage(String),
    #[error("internal error: {0}")]
    Internal(String),
    /// A loss or parameter became NaN/Inf.
    #[error("non-finite {what} at step {step}")]
    NonFinite { what: String, step: u64 },
    #[error("Riccati iteration did not converge after {iters} iterations (residual {residual:e})")]
    LqrNotConverged { iters: usize, residual: f64 },
    #[error("expert below acceptance floor: mean return {mean:.3} vs floor {floor:.3}; train the expert for more steps")]
    ExpertBelowFloor { mean: f64, floor: f64 },
    #[error("correlation undefined: {0} series has zero variance")]
    UndefinedCorrelation(&'static str),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
