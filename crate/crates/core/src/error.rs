use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A value fell outside the domain an operation is defined on.
    #[error("{what} = {value} is out of range ({expected})")]
    Range {
        what: &'static str,
        value: f64,
        expected: String,
    },

    /// Shapes, layouts or caches that do not line up.
    #[error("structural mismatch: {0}")]
    Structural(String),

    #[error("non-finite values in `{tensor}`")]
    NonFinite { tensor: String },

    #[error("schedule is degenerate at t = {t}: r_t equals R_f")]
    DegenerateSchedule { t: f64 },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("cannot fit exponential: {0}")]
    DegenerateFit(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("config error at line {line}, key `{key}`: {message}")]
    Config {
        key: String,
        line: usize,
        message: String,
    },

    /// The training loss stopped being finite; `trace` ends with a diagnostic
    /// row for the failing step.
    #[error("loss became non-finite at step {step}")]
    Diverged {
        step: u64,
        trace: Box<crate::harness::RunTrace>,
    },

    #[error("invalid experiment: {0}")]
    Validation(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn range(what: &'static str, value: f64, expected: impl Into<String>) -> Self {
        Error::Range {
            what,
            value,
            expected: expected.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
