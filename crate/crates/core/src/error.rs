//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
///
/// Variants are grouped by failure class so callers (notably the CLI) can
/// map them onto distinct exit codes: configuration/validation problems,
/// numerical failures, and I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates its documented invariant.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Input data violates a precondition (negative power, non-finite entries, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Tensor/matrix dimensions do not agree.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// The signal is shorter than one analysis window.
    #[error("signal too short: need at least {needed} samples, got {got}")]
    SignalTooShort { needed: usize, got: usize },

    /// A covariance matrix could not be factorized even after diagonal loading.
    #[error("singular covariance: {0}")]
    SingularCovariance(String),

    /// A mask column sums to zero, so the normalized covariance is undefined.
    #[error("degenerate mask: zero mask sum at frequency bin {bin}")]
    DegenerateMask { bin: usize },

    /// A quantity required to be positive vanished (zero denominator, zero noise energy, ...).
    #[error("degenerate value: {0}")]
    Degenerate(String),

    /// An operation needs state (e.g. a forward record) that is missing.
    #[error("state error: {0}")]
    StateError(String),

    /// A named entity (op id, parameter, config key) does not exist.
    #[error("not found: {0}")]
    NotFound(String),

    /// An update was attempted on a frozen parameter store.
    #[error("freeze violation: {0}")]
    FreezeViolation(String),

    /// Underlying file-system error.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// WAV container problem (unsupported format, bad sample rate, ...).
    #[error("wav error: {0}")]
    Wav(String),

    /// Checkpoint container problem (bad magic, version, topology mismatch).
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, Error>;
