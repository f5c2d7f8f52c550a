use std::fmt;

use serde_json::json;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Usage,
    Data,
    Numeric,
}

impl Kind {
    fn name(self) -> &'static str {
        match self {
            Kind::Usage => "usage",
            Kind::Data => "data",
            Kind::Numeric => "numeric",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            kind: Kind::Usage,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            kind: Kind::Data,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            Kind::Usage => 1,
            Kind::Data => 2,
            Kind::Numeric => 3,
        }
    }

    /// Single-line JSON for standard error.
    pub fn to_json_line(&self) -> String {
        json!({ "error": self.kind.name(), "message": self.message }).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} error: {}", self.kind.name(), self.message)
    }
}

impl std::error::Error for CliError {}

impl From<cownter_core::Error> for CliError {
    fn from(e: cownter_core::Error) -> Self {
        use cownter_core::Error as E;
        let kind = match e {
            E::NonFinite(_) => Kind::Numeric,
            E::InvalidArgument(_) => Kind::Usage,
            _ => Kind::Data,
        };
        Self {
            kind,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::data(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::data(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
