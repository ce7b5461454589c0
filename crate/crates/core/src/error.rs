use std::path::PathBuf;

/// Errors raised anywhere in the debate engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("no eligible corrupted object for ({subject}, {predicate}, _)")]
    Exhausted { subject: usize, predicate: usize },

    #[error("no query triple matches the target relations")]
    EmptySplit,

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("bad snapshot or checkpoint: {0}")]
    Format(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
