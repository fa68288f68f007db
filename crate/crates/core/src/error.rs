//! Crate-wide error type.
//!
//! Shape mismatches inside the tensor engine are programming errors and
//! panic with a message naming the primitive and both shapes; everything
//! driven by user input (files, configs, degenerate data) surfaces here.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dataset load failed at byte {offset}: {reason}")]
    DatasetLoad { offset: usize, reason: String },

    #[error("dataset save failed: {0}")]
    DatasetSave(String),

    #[error("csv import failed at line {line}: {reason}")]
    CsvImport { line: usize, reason: String },

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("channel {channel} has zero variance over the training range")]
    DegenerateChannel { channel: usize },

    #[error("window of {window} steps does not fit in range of {available} steps")]
    WindowTooLong { window: usize, available: usize },

    #[error("invalid synthetic spec: {0}")]
    InvalidSyntheticSpec(String),

    #[error("degenerate mask: round({ratio} * {patches}) leaves {masked} masked patches")]
    DegenerateMask {
        ratio: f64,
        patches: usize,
        masked: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("training aborted: non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("checkpoint io failed: {0}")]
    CheckpointIo(String),

    #[error("stale cache: bank was built for checkpoint {bank_hash} but current checkpoint is {expected_hash}")]
    StaleBank {
        bank_hash: String,
        expected_hash: String,
    },

    #[error("representation bank has no entry for node {node} at window start {start}")]
    BankMiss { node: usize, start: usize },

    #[error("node {node} has a zero-norm feature row")]
    ZeroNormRow { node: usize },

    #[error("invalid k for knn graph: k={k}, n={n}")]
    InvalidK { k: usize, n: usize },

    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),

    #[error("metric computed over empty inclusion set")]
    EmptyInclusion,

    #[error("epoch must be >= 1, got {0}")]
    InvalidEpoch(usize),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
