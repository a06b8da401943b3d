use mdlab::Error;
use std::fmt;

/// Failure classes, each with a fixed exit code.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// Bad flags, config file or output location (exit 2).
    Config(String),
    /// Model construction or tier mismatch (exit 3).
    Model(String),
    /// A hard assertion failed (exit 4).
    Assertion(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Model(_) => 3,
            CliError::Assertion(_) => 4,
        }
    }

    pub fn model(e: Error) -> Self {
        CliError::Model(e.to_string())
    }

    pub fn io(what: &std::path::Path, e: std::io::Error) -> Self {
        CliError::Config(format!("out: {}: {e}", what.display()))
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::NonStochasticRow { .. }
            | Error::NotSquare { .. }
            | Error::LengthMismatch { .. }
            | Error::ZeroDenominator
            | Error::ReducibleChain { .. }
            | Error::PeriodicChain { .. }
            | Error::DegeneratePayoff
            | Error::UnknownBuiltin(_)
            | Error::SampledTierUnsupported
            | Error::DegenerateVariance(_)
            | Error::NoDecayCertificate
            | Error::NestedEstimateUnavailable
            | Error::ModelFile(_) => CliError::Model(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(s) => write!(f, "configuration error: {s}"),
            CliError::Model(s) => write!(f, "model error: {s}"),
            CliError::Assertion(s) => write!(f, "assertion failed: {s}"),
        }
    }
}

impl std::error::Error for CliError {}
