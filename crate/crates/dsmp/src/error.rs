use std::fmt;

use dsmp_core::Error;
use serde::Serialize;
use serde_json::Value;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorKind {
    Config,
    NonConvergence,
    InvariantViolation,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 1,
            ErrorKind::NonConvergence => 2,
            ErrorKind::InvariantViolation => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
    /// Names of violated conditions, when a check failed.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub violated: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub details: Option<Value>,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            kind: ErrorKind::Config,
            message: message.into(),
            violated: Vec::new(),
            details: None,
        }
    }

    pub fn violation(message: impl Into<String>, violated: Vec<String>) -> Self {
        CliError {
            kind: ErrorKind::InvariantViolation,
            message: message.into(),
            violated,
            details: None,
        }
    }

    /// Core errors raised while building a problem from user input.
    pub fn from_core_config(e: Error) -> Self {
        CliError::config(e.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }

    /// One-line JSON for standard error.
    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self }).to_string()
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let kind = match &e {
            Error::NonConvergence { .. } | Error::NonFinite { .. } => ErrorKind::NonConvergence,
            Error::Config(_)
            | Error::CapExceeded { .. }
            | Error::DimensionMismatch { .. }
            | Error::StepOutOfRange { .. }
            | Error::UnsupportedDriverDim(_)
            | Error::InvalidInput(_) => ErrorKind::Config,
            Error::LatticeMismatch
            | Error::DynamicsMismatch { .. }
            | Error::NotAdapted { .. }
            | Error::Singular(_)
            | Error::ZeroNorm(_) => ErrorKind::InvariantViolation,
        };
        let details = match &e {
            Error::NonConvergence { history, iterations, .. } => Some(serde_json::json!({
                "iterations": iterations,
                "history": history,
            })),
            _ => None,
        };
        CliError {
            kind,
            message: e.to_string(),
            violated: Vec::new(),
            details,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_follow_kinds() {
        let e: CliError = Error::NonConvergence {
            what: "picard",
            iterations: 3,
            history: vec![1.0, 2.0],
        }
        .into();
        assert_eq!(e.exit_code(), 2);
        assert_eq!(CliError::config("x").exit_code(), 1);
        let v = CliError::violation("bad", vec!["Hamiltonian control condition".into()]);
        assert_eq!(v.exit_code(), 3);
        let json: Value = serde_json::from_str(&v.to_json()).unwrap();
        assert_eq!(json["error"]["kind"], "invariant-violation");
        assert_eq!(json["error"]["violated"][0], "Hamiltonian control condition");
    }
}
