use std::fmt;

/// Failure classes, each with its own exit status.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// Config, schema or input-data error: exit 2.
    Config(String),
    /// The numerics failed: exit 3.
    Numerical(String),
    /// Reading or writing files: exit 4.
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<cqed_core::Error> for CliError {
    fn from(e: cqed_core::Error) -> Self {
        use cqed_core::Error as E;
        match e {
            E::Config(_)
            | E::Domain(_)
            | E::Dimension(_)
            | E::NoFiniteTemperature
            | E::InvalidState(_) => CliError::Config(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}
