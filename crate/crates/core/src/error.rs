use thiserror::Error;

use crate::dataset_io::ValidationReport;

/// Precondition failures of the metric functions.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("n-gram order {0} is outside the supported range 1..={max}", max = crate::textcore::MAX_NGRAM)]
    NGramOrder(usize),
    #[error("at least one reference is required")]
    NoReferences,
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("weights must have between 1 and 4 entries, got {0}")]
    WeightCount(usize),
    #[error("recall is undefined for word {0:?}: it never occurs in the reference captions")]
    UndefinedRecall(String),
    #[error("no system predictions for word {0:?}")]
    NoPredictions(String),
    #[error("prediction refers to unknown image {0}")]
    UnknownImage(i64),
}

/// Failures while reading reference sets, submissions and auxiliary files.
#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("expected a JSON array at the top level")]
    NotAnArray,
    #[error("record {index}: {message}")]
    Record { index: usize, message: String },
    #[error("image {0} has no captions")]
    NoCaptions(i64),
    #[error("zip archive: {0}")]
    Zip(String),
    #[error("{0}")]
    Format(String),
}

/// Failures of a full scoring run.
#[derive(Debug, Error)]
pub enum EngineError {
    #[error("submission failed validation with {} violation(s)", .0.violations.len())]
    Validation(ValidationReport),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}
