use std::fmt;

use serde_json::json;

/// A failed run, carrying the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Invalid configuration or input files (exit 2).
    Config(String),
    /// A run would exceed its resource budget (exit 3).
    Cap(String),
    /// The conditioning event never occurred (exit 4).
    ZeroAcceptance(String),
    /// Anything else, such as I/O failures (exit 1).
    Other(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Cap(_) => 3,
            CliError::ZeroAcceptance(_) => 4,
            CliError::Other(_) => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "invalid-config",
            CliError::Cap(_) => "resource-cap",
            CliError::ZeroAcceptance(_) => "zero-acceptance",
            CliError::Other(_) => "error",
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Cap(m) | CliError::ZeroAcceptance(m) | CliError::Other(m) => m,
        }
    }

    /// One JSON object on one line, for scripts.
    pub fn machine_line(&self) -> String {
        json!({"error": self.kind(), "exit_code": self.exit_code(), "message": self.message()}).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind(), self.message())
    }
}

impl std::error::Error for CliError {}

impl From<percolymer::Error> for CliError {
    fn from(e: percolymer::Error) -> Self {
        use percolymer::Error as E;
        let msg = e.to_string();
        match e {
            E::ResourceCap { .. } => CliError::Cap(msg),
            E::ZeroAcceptance { .. } => CliError::ZeroAcceptance(msg),
            E::InvalidArgument(_) | E::Dimension { .. } => CliError::Config(msg),
            _ => CliError::Other(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Other(e.to_string())
    }
}
