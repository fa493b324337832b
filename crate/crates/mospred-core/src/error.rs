//! Error type shared by all core modules.

use alloc::string::String;
use core::fmt;

/// Errors produced by corpus handling, the numerical stack, training, and
/// evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A rating, config, or corpus violated one of its invariants.
    Invalid(String),
    /// Tensor shapes do not conform for the requested operation.
    ShapeMismatch(String),
    /// A gradient or loss became non-finite; the payload names the culprit.
    NonFinite(String),
    /// A correlation is undefined (zero variance / all-tied input).
    UndefinedCorrelation(String),
    /// A feature reference could not be resolved.
    MissingFeatures(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Invalid(msg) => write!(f, "invalid input: {msg}"),
            Error::ShapeMismatch(msg) => write!(f, "shape mismatch: {msg}"),
            Error::NonFinite(msg) => write!(f, "non-finite value: {msg}"),
            Error::UndefinedCorrelation(msg) => write!(f, "undefined correlation: {msg}"),
            Error::MissingFeatures(msg) => write!(f, "missing features: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub fn non_finite(msg: impl Into<String>) -> Self {
        Error::NonFinite(msg.into())
    }
}
