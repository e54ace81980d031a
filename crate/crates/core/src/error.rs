//! Error type shared by every module in the crate.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed header: {detail}")]
    MalformedHeader { path: PathBuf, detail: String },

    #[error("{path}: malformed payload at byte {offset}: {detail}")]
    MalformedBinary {
        path: PathBuf,
        detail: String,
        offset: u64,
    },

    #[error("{path}: row {row}: expected {expected} columns, found {found}")]
    RaggedRow {
        path: PathBuf,
        row: u64,
        expected: usize,
        found: usize,
    },

    #[error("{path}: row {row}, column {col}: cannot parse {value:?} as a number")]
    BadNumber {
        path: PathBuf,
        row: u64,
        col: usize,
        value: String,
    },

    #[error("{path}: row {row}, column {col}: non-finite value")]
    NonFinite { path: PathBuf, row: u64, col: usize },

    #[error("{path}: unsupported npy file: {detail}")]
    UnsupportedNpy { path: PathBuf, detail: String },

    #[error("dataset needs at least 2 rows and 2 columns, got {rows}x{cols}")]
    TooSmall { rows: usize, cols: usize },

    #[error("duplicate id {id:?}")]
    DuplicateId { id: String },

    #[error("invalid id {id:?}: {detail}")]
    BadId { id: String, detail: String },

    #[error("row {id:?} has zero norm")]
    ZeroNormRow { id: String },

    #[error("zero-norm vector has no direction")]
    ZeroNormVector,

    #[error("vector lengths differ: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("row index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("unknown id {id:?}")]
    UnknownId { id: String },

    #[error("dataset rows must be normalized first")]
    NotNormalized,

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("non-finite sample value")]
    NonFiniteSample,

    #[error("all values identical within {tolerance:e}; no bimodal structure to fit")]
    DegenerateValues { tolerance: f64 },

    #[error("no surrogate candidate separates the neighborhood into two populated modes")]
    NoConceptFound,

    #[error("member set has rank zero; no concept subspace exists")]
    RankDeficient,

    #[error("concept embedding is numerically zero; skip this concept")]
    ZeroConceptEmbedding,

    #[error("component {component} out of range for subspace of rank {k}")]
    ComponentOutOfRange { component: usize, k: usize },

    #[error("reference pool needs at least {needed} concept embeddings, got {got}")]
    PoolTooSmall { needed: usize, got: usize },

    #[error("concept distribution is degenerate (sigma = {sigma:e})")]
    DegenerateDistribution { sigma: f64 },

    #[error("planted spec is infeasible: {0}")]
    InfeasibleSpec(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
