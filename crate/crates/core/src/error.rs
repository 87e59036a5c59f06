use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("degenerate embedding: row {row} has zero norm before projection")]
    DegenerateEmbedding { row: usize },

    #[error("batch too small: need at least {min} pairs, got {got}")]
    BatchTooSmall { min: usize, got: usize },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("support too large: {atoms} atoms exceeds the solver capacity of {capacity}")]
    Capacity { atoms: usize, capacity: usize },

    #[error("theorem not applicable: {0}")]
    TheoremInapplicable(String),

    #[error("assumption violated: {0}")]
    AssumptionViolation(String),

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    TrainingDiverged { epoch: usize },

    #[error("insufficient classes: {0}")]
    InsufficientClasses(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
