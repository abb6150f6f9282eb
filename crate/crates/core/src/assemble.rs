//! Fused raw matrices: structured columns followed by document
//! embeddings, one row per labelled admission.

use crate::domain::{AdmissionRecord, FeatureMatrix, LabeledDataset};
use crate::embed::{embed_cohort, EmbeddingTable};
use crate::error::Result;
use crate::preprocess::{fit_transform, structured_matrix, Audit, PreprocessConfig};
use crate::schema::Schema;

#[derive(Debug, Clone, PartialEq)]
pub struct RawCohort {
    /// Unprocessed values; missing cells stay missing.
    pub features: FeatureMatrix,
    pub labels: Vec<bool>,
    pub admission_ids: Vec<String>,
}

/// Labelled records as a raw matrix; unlabelled records are dropped.
/// Without a table only structured columns are produced.
pub fn raw_cohort(records: &[AdmissionRecord], schema: &Schema, table: Option<&EmbeddingTable>) -> Result<RawCohort> {
    let kept: Vec<AdmissionRecord> = records.iter().filter(|r| r.label.is_some()).cloned().collect();
    let mut features = structured_matrix(&kept, schema)?;
    if let Some(table) = table {
        features = features.hstack(&embed_cohort(&kept, table))?;
    }
    Ok(RawCohort {
        features,
        labels: kept.iter().map(|r| r.label.expect("filtered")).collect(),
        admission_ids: kept.into_iter().map(|r| r.admission_id).collect(),
    })
}

/// Preprocessing fit on the whole cohort.
pub fn prepare(raw: &RawCohort, cfg: &PreprocessConfig) -> Result<(LabeledDataset, Audit)> {
    let (features, audit) = fit_transform(&raw.features, cfg)?;
    Ok((LabeledDataset::new(features, raw.labels.clone())?, audit))
}
