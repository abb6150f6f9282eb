use std::path::PathBuf;

use crate::domain::FeatureGroup;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("no column matches the requested feature groups {0:?}")]
    NoMatchingColumns(Vec<FeatureGroup>),

    #[error("invalid feature matrix: {0}")]
    InvalidMatrix(String),

    #[error("{path}: header does not match schema: {detail}")]
    SchemaMismatch { path: PathBuf, detail: String },

    #[error("{path}:{line}: malformed row: {detail}")]
    MalformedRow {
        path: PathBuf,
        line: u64,
        detail: String,
    },

    #[error("unparseable ICD-9 code {0:?}")]
    UnparseableCode(String),

    #[error("admission {admission_id}: death date precedes admission date")]
    NegativeInterval { admission_id: String },

    #[error("unknown feature {0:?}")]
    UnknownFeature(String),

    #[error("column {0:?} has no observed values")]
    AllMissingColumn(String),

    #[error("{0} missing cells remain after preprocessing")]
    IncompletePipeline(usize),

    #[error("{path}:{line}: bad embedding header: {detail}")]
    BadHeader {
        path: PathBuf,
        line: u64,
        detail: String,
    },

    #[error("{path}:{line}: expected {expected} fields, found {found}")]
    DimensionMismatch {
        path: PathBuf,
        line: u64,
        expected: usize,
        found: usize,
    },

    #[error("{0}: embedding file has no vectors")]
    EmptyVocabulary(PathBuf),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("training batch has {0} rows; batch statistics need at least 2")]
    BatchTooSmall(usize),

    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),

    #[error("invalid fold count k={k} for n={n}")]
    InvalidK { n: usize, k: usize },

    #[error("AUC needs both classes present")]
    OneClassOnly,

    #[error("precision-recall curve needs at least one positive label")]
    NoPositives,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
