use chrono::NaiveDate;
use thiserror::Error;

/// Errors produced anywhere in the scenario-generation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("missing column `{0}` in header")]
    MissingColumn(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("degenerate scale: channel `{0}` is identically zero")]
    DegenerateScale(&'static str),

    #[error("days {previous} and {day} are not consecutive")]
    Gap { previous: NaiveDate, day: NaiveDate },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("activation cache does not match parameters: {0}")]
    StaleCache(String),

    #[error("training diverged: non-finite gradient in layer {layer}")]
    Divergence { layer: usize },

    #[error("numerical failure in layer {layer}: {message}")]
    Numerical { layer: usize, message: String },

    #[error("training aborted at epoch {epoch}, batch {batch}: {source}")]
    TrainingAborted {
        epoch: usize,
        batch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("schedule: {0}")]
    Schedule(String),

    #[error("history pool is empty")]
    EmptyPool,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
