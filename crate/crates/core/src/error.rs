//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("csv error in {path} at record {record}: {message}")]
    Csv {
        path: PathBuf,
        record: u64,
        message: String,
    },
    #[error("ragged row {row}: expected {expected} fields, found {found}")]
    RaggedRow {
        row: u64,
        expected: usize,
        found: usize,
    },
    #[error("label column '{0}' not found in header")]
    MissingLabelColumn(String),
    #[error("label column '{name}' has {count} distinct values, expected exactly 2")]
    LabelCardinality { name: String, count: usize },
    #[error("degenerate table: fewer than 2 non-empty rows or columns remain{}", context_suffix(.context))]
    DegenerateTable { context: Option<String> },
    #[error("chi-square analysis needs at least 2 categorical columns (including the label), found {0}")]
    TooFewCategoricalColumns(usize),
    #[error("underdetermined regression: {rows} rows for {cols} feature columns")]
    UnderdeterminedRegression { rows: usize, cols: usize },
    #[error("resampling ratio must lie in (0, 1], got {0}")]
    InvalidRatio(f64),
    #[error("smote needs more than k={k} minority rows, found {minority}; use a smaller k")]
    MinorityTooSmall { k: usize, minority: usize },
    #[error("both classes must be present: found {positives} positive and {negatives} negative rows")]
    ClassMissing { positives: usize, negatives: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("convex stage requires gamma <= 1, got {0}")]
    ConvexGammaTooLarge(f64),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("epoch {epoch} outside schedule range 1..={total}")]
    EpochOutOfRange { epoch: usize, total: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("class '{class}' has {count} rows, fewer than k={k} folds")]
    ClassSmallerThanFolds {
        class: u8,
        count: usize,
        k: usize,
    },
    #[error("roc curve needs both classes, got a single-class input")]
    SingleClass,
    #[error("background set is empty")]
    EmptyBackground,
    #[error("{features} features exceed the exact enumeration limit {limit}; use permutation_shapley")]
    ExactLimitExceeded { features: usize, limit: usize },
    #[error("invalid checkpoint {path}: {message}")]
    InvalidCheckpoint { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("{0}")]
    Invalid(String),
}

fn context_suffix(context: &Option<String>) -> String {
    match context {
        Some(c) => format!(" ({c})"),
        None => String::new(),
    }
}

pub type Result<T> = std::result::Result<T, Error>;
