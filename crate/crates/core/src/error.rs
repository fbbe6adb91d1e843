use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("non-finite input to {op}")]
    NumericInput { op: &'static str },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("function is not deterministic: baseline evaluations {first} and {second} differ")]
    Determinism { first: f64, second: f64 },

    #[error("degenerate depth range: d_min {d_min} >= d_max {d_max}")]
    DegenerateRange { d_min: f64, d_max: f64 },

    #[error("degenerate depth statistics: sigma {sigma} must be positive")]
    DegenerateStats { sigma: f64 },

    #[error("instruction is empty")]
    EmptyInstruction,

    #[error("task error: {0}")]
    Task(String),

    #[error("paraphrase bank has no entry for family {0}")]
    Bank(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },

    #[error("config error: unknown or invalid key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("range error: {field} = {value} ({expected})")]
    Range {
        field: String,
        value: String,
        expected: String,
    },

    #[error("checkpoint corrupted: {0}")]
    Corruption(String),

    #[error("checkpoint incompatible with config: {0}")]
    Compatibility(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a failure while running.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Config { .. } | Error::Range { .. } | Error::Compatibility(_) => true,
            Error::Stage { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}

/// Attach a pipeline stage name to errors coming out of a sub-module.
pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage,
            source: Box::new(e),
        })
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
