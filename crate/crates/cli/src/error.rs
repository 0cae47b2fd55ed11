//! Error taxonomy for the command line: usage errors (exit 1), data errors
//! (exit 2), internal errors (exit 3). Every failure is reported as exactly
//! one JSON line on standard error so wrapping scripts can parse it.

use std::fmt;

use adex_core::bandit::BanditError;
use adex_core::estimators::EstimatorError;
use adex_core::experiment::ExperimentError;
use adex_core::model::{DataError, ModelError};
use adex_core::policy::PolicyError;
use adex_core::sim::SimError;
use serde::Serialize;

/// A failed run, classified by who has to fix it: the caller's invocation
/// (usage), the caller's files or configuration (data), or this program
/// (internal).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CliError {
    Usage(String),
    Data(String),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Data(_) => "data",
            CliError::Internal(_) => "internal",
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Internal(m) => m,
        }
    }

    /// The machine-readable stderr line: `{"error":KIND,"message":MSG}`.
    /// JSON string escaping keeps it on one line whatever the message holds.
    pub fn stderr_line(&self) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            error: &'static str,
            message: &'a str,
        }
        serde_json::to_string(&Line { error: self.kind(), message: self.message() })
            .expect("two plain string fields always serialize")
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind(), self.message())
    }
}

impl std::error::Error for CliError {}

// Engine errors all describe problems with the caller's data or
// configuration, never with this binary.
macro_rules! data_error {
    ($ty:ty) => {
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Data(e.to_string())
            }
        }
    };
}

data_error!(ModelError);
data_error!(DataError);
data_error!(BanditError);
data_error!(ExperimentError);
data_error!(EstimatorError);
data_error!(PolicyError);
data_error!(SimError);
