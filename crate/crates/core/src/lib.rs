//! Mortality prediction from structured admission features fused with
//! averaged word-embedding features of discharge summaries.
//!
//! The crate is organised as a pipeline:
//!
//! * [`ingest`] parses cohort CSV files, selects the ICD-9 cohort,
//!   deduplicates admissions and assigns one-year labels.
//! * [`preprocess`] unmasks ages, scrubs invalid values, removes IQR
//!   outliers, imputes column means and min-max normalizes.
//! * [`embed`] loads word vectors and averages them per document.
//! * [`mlp`] and [`baseline`] are the deep and shallow classifiers.
//! * [`eval`] runs repeated k-fold cross-validation and ablations.
//! * [`synth`] generates schema-compatible synthetic cohorts.

pub mod assemble;
pub mod baseline;
pub mod checkpoint;
pub mod config;
pub mod domain;
pub mod embed;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod mlp;
pub mod preprocess;
pub mod rng;
pub mod schema;
pub mod synth;

pub use domain::{AdmissionRecord, ColumnStats, FeatureGroup, FeatureMatrix, LabeledDataset};
pub use error::{Error, Result};
