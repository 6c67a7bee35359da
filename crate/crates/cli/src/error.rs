//! Exit-code contract: 0 success, 2 usage/config, 3 data, 4 numerical.
//!
//! Every library error is folded into one of the three classes so scripts can
//! branch on the cause without parsing messages. Missing *input* files are
//! usage errors (the command was mis-invoked); I/O failures while working are
//! data errors.

use std::fmt;

use motiondiff_core::Error as CoreError;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, bad config keys or values, incompatible checkpoints,
    /// missing inputs. Exit 2.
    Usage(String),
    /// Unusable or unreadable data: empty corpora, parse failures, I/O. Exit 3.
    Data(String),
    /// Non-finite values or a numerical routine outside its envelope. Exit 4.
    Numerical(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numerical(m) => f.write_str(m),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match &e {
            CoreError::BadArgument(_)
            | CoreError::BadSpec(_)
            | CoreError::BadTimestep { .. }
            | CoreError::LayoutError(_)
            | CoreError::ShapeMismatch(_)
            | CoreError::ConfigMismatch(_)
            | CoreError::ModelError(_) => CliError::Usage(e.to_string()),
            CoreError::DegenerateRotation(_)
            | CoreError::TooShort(_)
            | CoreError::BadCorpus(_)
            | CoreError::EmptyCorpus
            | CoreError::TooFewSamples(_)
            | CoreError::ParseError(_)
            | CoreError::Io(_) => CliError::Data(e.to_string()),
            CoreError::NonFiniteActivation(_)
            | CoreError::NonFiniteGradient(_)
            | CoreError::NumericalError(_) => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(format!("io error: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(format!("json error: {e}"))
    }
}
