use std::fmt::Display;
use std::process::ExitCode;

/// Failure classes, each with its own exit status.
#[derive(Debug)]
pub enum CliError {
    /// Invalid configuration or flags: exit 2.
    Config(String),
    /// Missing, malformed or incompatible input files: exit 3.
    Data(String),
    /// Anything that goes wrong while running: exit 1.
    Runtime(String),
}

impl CliError {
    pub fn config(e: impl Display) -> Self {
        CliError::Config(e.to_string())
    }

    pub fn data(e: impl Display) -> Self {
        CliError::Data(e.to_string())
    }

    pub fn runtime(e: impl Display) -> Self {
        CliError::Runtime(e.to_string())
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Runtime(_) => 1,
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
        })
    }
}

impl Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "invalid configuration: {m}"),
            CliError::Data(m) => write!(f, "input error: {m}"),
            CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}
