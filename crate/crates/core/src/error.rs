//! Crate-wide error type.

use std::io;

/// Errors produced by every layer of the crate.
///
/// Variants are grouped by how a caller is expected to react: input and
/// configuration problems (`Validation`, `Parse`, `Config`, `Input`, ...) are
/// the caller's fault, while `Divergence`, `Annotation` and `Io` are runtime
/// failures.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unknown {kind} id `{id}`")]
    Lookup { kind: &'static str, id: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("line {line}: {message}")]
    Validation { line: usize, message: String },

    #[error("line {line}: malformed JSON: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error("value out of range: {0}")]
    Range(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate preference {value} for prompt `{prompt}`, pair ({a}, {b})")]
    Domain {
        prompt: String,
        a: String,
        b: String,
        value: f64,
    },

    #[error("preference is not Bradley-Terry consistent: max cocycle violation {max_violation:e} at prompt `{prompt}`")]
    Consistency { prompt: String, max_violation: f64 },

    #[error("label error: {0}")]
    Label(String),

    #[error("training diverged at step {step}: loss {loss} exceeds 10x initial {initial}")]
    Divergence { step: usize, loss: f64, initial: f64 },

    #[error("annotation failed for prompt `{prompt}`, pair ({a}, {b}): {message}")]
    Annotation {
        prompt: String,
        a: String,
        b: String,
        message: String,
    },

    #[error("annotator protocol violation: {0}")]
    Protocol(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("boundary interval ({low:.4}, {high:.4}) straddles 0.5; refusing to call a stage")]
    Straddle { low: f64, high: f64 },

    #[error("incomplete report: missing {0:?}")]
    Report(Vec<String>),

    #[error("I/O error after {written} bytes: {source}")]
    Io {
        written: usize,
        #[source]
        source: io::Error,
    },

    #[error("iteration {index}: {source}")]
    Iteration {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<io::Error> for Error {
    fn from(source: io::Error) -> Self {
        Error::Io { written: 0, source }
    }
}

impl Error {
    pub(crate) fn lookup(kind: &'static str, id: impl Into<String>) -> Self {
        Error::Lookup {
            kind,
            id: id.into(),
        }
    }

    /// The innermost error, looking through iteration context.
    pub fn root(&self) -> &Error {
        match self {
            Error::Iteration { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for errors caused by invalid user input or configuration, as
    /// opposed to failures while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self.root(),
            Error::Lookup { .. }
                | Error::Shape(_)
                | Error::Validation { .. }
                | Error::Parse { .. }
                | Error::Range(_)
                | Error::Config(_)
                | Error::Input(_)
                | Error::Label(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
