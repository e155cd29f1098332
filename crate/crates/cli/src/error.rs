use std::fmt;

use codemix::corpus::CorpusError;
use codemix::nn::NnError;
use codemix::tasks::TaskError;

/// Failure classes, each with its process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or usage (exit 2).
    Config(String),
    /// Unreadable or malformed input data (exit 3).
    Data(String),
    /// Training diverged or produced non-finite values (exit 4).
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::InvalidWeights { .. }
            | CorpusError::InvalidSplit(..)
            | CorpusError::UnknownPolicy(_)
            | CorpusError::InfeasibleSynth(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::InvalidSpec(_) | NnError::InvalidArgument(_) | NnError::PosEnc(_) => CliError::Config(e.to_string()),
            NnError::NonFiniteGradient(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TaskError> for CliError {
    fn from(e: TaskError) -> Self {
        match e {
            TaskError::Nn(e) => e.into(),
            TaskError::Corpus(e) => e.into(),
            TaskError::Config(m) => CliError::Config(m),
            TaskError::Data(m) | TaskError::Mismatch(m) => CliError::Data(m),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
