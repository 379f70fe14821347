use thiserror::Error;

use crate::learners::LearnerKind;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("ingestion error at row {row}: {message}")]
    Ingestion { row: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("stratification error: {0}")]
    Stratification(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("training error at iteration {iteration}: {message}")]
    Training { iteration: usize, message: String },

    #[error("empty bagging for {kind}: no candidate reached the admission threshold (best averaged Gini {best_gini:.4})")]
    EmptyBagging { kind: LearnerKind, best_gini: f64 },

    #[error("missing bagging for {kind} on split {split}")]
    MissingBagging { split: usize, kind: LearnerKind },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad input rather than a failing computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Ingestion { .. }
                | Error::Validation(_)
                | Error::Schema(_)
                | Error::Stratification(_)
                | Error::Dimension(_)
                | Error::Json(_)
                | Error::Csv(_)
        )
    }
}
