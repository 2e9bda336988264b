use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line is empty after trimming")]
    EmptyLine,

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("source/target line counts differ: {source_lines} vs {target_lines}")]
    Alignment {
        source_lines: usize,
        target_lines: usize,
    },

    #[error("unknown synthetic domain generator `{0}`")]
    UnknownDomain(String),

    #[error("domain `{domain}` has {available} source words, {required} required")]
    InsufficientData {
        domain: String,
        available: usize,
        required: usize,
    },

    #[error("sweep plan: {0}")]
    Plan(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {context}")]
    Numerical { context: String },

    #[error("gradient check failed: max relative error {max_rel_error:.3e} is not below {tolerance:e}")]
    GradientCheck { max_rel_error: f64, tolerance: f64 },

    #[error("parameter scope: {0}")]
    Scope(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("task `{task}`: {source}")]
    InTask {
        task: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn numerical(context: impl Into<String>) -> Self {
        Error::Numerical {
            context: context.into(),
        }
    }

    pub fn in_task(self, task: impl Into<String>) -> Self {
        Error::InTask {
            task: task.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping task annotations.
    pub fn root(&self) -> &Error {
        match self {
            Error::InTask { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code: 1 usage/config, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Config(_) | Error::Plan(_) | Error::Scope(_) | Error::Json(_) => 1,
            Error::Numerical { .. } | Error::GradientCheck { .. } => 3,
            _ => 2,
        }
    }
}
