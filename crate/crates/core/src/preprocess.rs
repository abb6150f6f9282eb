//! Structured-feature cleaning: age unmasking, invalid-value scrubbing,
//! IQR outlier removal, mean imputation and min-max normalization.
//!
//! Each statistical stage is split into a fit step (statistics computed
//! over a set of rows) and an apply step, so the same code serves the
//! whole-dataset fit and the per-training-fold fit used by
//! cross-validation. The stand-alone stage functions fit and apply over
//! every row of the matrix they are given.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::config::KvConfig;
use crate::domain::{AdmissionRecord, ColumnStats, FeatureGroup, FeatureMatrix, LabeledDataset};
use crate::error::{Error, Result};
use crate::schema::{FeatureKind, Schema};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitScope {
    /// Statistics fit once on the whole dataset before cross-validation.
    WholeDataset,
    /// Statistics refit on each training fold and applied to its test fold.
    LeakageSafe,
}

impl FromStr for FitScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "replicate" | "whole-dataset" => Ok(FitScope::WholeDataset),
            "leakage-safe" | "leakage_safe" => Ok(FitScope::LeakageSafe),
            other => Err(Error::InvalidConfig(format!("unknown fit scope {other:?}"))),
        }
    }
}

impl fmt::Display for FitScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FitScope::WholeDataset => "replicate",
            FitScope::LeakageSafe => "leakage-safe",
        })
    }
}

/// Statistical stages; age unmasking always runs first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Scrub,
    Outliers,
    Impute,
    Normalize,
}

impl Stage {
    pub const DEFAULT_ORDER: [Stage; 4] = [Stage::Scrub, Stage::Outliers, Stage::Impute, Stage::Normalize];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Scrub => "scrub_invalid",
            Stage::Outliers => "remove_outliers_iqr",
            Stage::Impute => "impute_mean",
            Stage::Normalize => "normalize_minmax",
        }
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "scrub" | "scrub_invalid" => Ok(Stage::Scrub),
            "outliers" | "remove_outliers_iqr" => Ok(Stage::Outliers),
            "impute" | "impute_mean" => Ok(Stage::Impute),
            "normalize" | "normalize_minmax" => Ok(Stage::Normalize),
            other => Err(Error::InvalidConfig(format!("unknown preprocessing stage {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// Age values at or above this are treated as masked.
    pub mask_threshold: f64,
    pub mask_offset: f64,
    pub iqr_multiplier: f64,
    pub validity_ranges: BTreeMap<String, (f64, f64)>,
    pub zero_is_missing: BTreeSet<String>,
    pub age_columns: BTreeSet<String>,
    /// Columns the IQR rule never touches (indicators and counts, whose
    /// quartiles collapse to a single value).
    pub iqr_exempt: BTreeSet<String>,
    pub fit_scope: FitScope,
    pub stage_order: Vec<Stage>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            mask_threshold: 300.0,
            mask_offset: 211.0,
            iqr_multiplier: 1.5,
            validity_ranges: BTreeMap::new(),
            zero_is_missing: BTreeSet::new(),
            age_columns: BTreeSet::new(),
            iqr_exempt: BTreeSet::new(),
            fit_scope: FitScope::WholeDataset,
            stage_order: Stage::DEFAULT_ORDER.to_vec(),
        }
    }
}

impl PreprocessConfig {
    /// Rules derived from a schema: validity ranges, zero placeholders,
    /// age columns and IQR exemptions for non-continuous kinds.
    pub fn from_schema(schema: &Schema) -> Self {
        let mut cfg = PreprocessConfig::default();
        for f in &schema.features {
            if let Some(range) = f.valid {
                cfg.validity_ranges.insert(f.name.clone(), range);
            }
            if f.zero_is_missing {
                cfg.zero_is_missing.insert(f.name.clone());
            }
            if f.kind == FeatureKind::Age {
                cfg.age_columns.insert(f.name.clone());
            }
            if !f.kind.is_continuous() {
                cfg.iqr_exempt.insert(f.name.clone());
            }
        }
        cfg
    }

    /// Applies `preprocess.*` keys.
    pub fn apply_kv(&mut self, kv: &KvConfig) -> Result<()> {
        kv.read_into("preprocess.mask_threshold", &mut self.mask_threshold)?;
        kv.read_into("preprocess.mask_offset", &mut self.mask_offset)?;
        kv.read_into("preprocess.iqr_multiplier", &mut self.iqr_multiplier)?;
        kv.read_into("preprocess.fit_scope", &mut self.fit_scope)?;
        if let Some(order) = kv.get_list("preprocess.stage_order") {
            self.stage_order = order.iter().map(|s| s.parse()).collect::<Result<_>>()?;
        }
        if let Some(cols) = kv.get_list("preprocess.zero_is_missing") {
            self.zero_is_missing = cols.into_iter().collect();
        }
        if let Some(cols) = kv.get_list("preprocess.age_columns") {
            self.age_columns = cols.into_iter().collect();
        }
        if let Some(cols) = kv.get_list("preprocess.iqr_exempt") {
            self.iqr_exempt = cols.into_iter().collect();
        }
        for (name, value) in kv.with_prefix("preprocess.valid.") {
            let (lo, hi) = value
                .split_once(',')
                .and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)))
                .ok_or_else(|| {
                    Error::InvalidConfig(format!("preprocess.valid.{name} = {value:?}: expected `min,max`"))
                })?;
            self.validity_ranges.insert(name.to_string(), (lo, hi));
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mask_offset > 0.0) {
            return Err(Error::InvalidConfig("mask_offset must be > 0".into()));
        }
        if !(self.iqr_multiplier > 0.0) {
            return Err(Error::InvalidConfig("iqr_multiplier must be > 0".into()));
        }
        for (name, &(lo, hi)) in &self.validity_ranges {
            if !(lo < hi) {
                return Err(Error::InvalidConfig(format!("valid range for {name}: min must be < max")));
            }
        }
        let mut seen = BTreeSet::new();
        for s in &self.stage_order {
            if !seen.insert(s.as_str()) {
                return Err(Error::InvalidConfig(format!("stage {} listed twice", s.as_str())));
            }
        }
        Ok(())
    }
}

pub fn unmask_age(value: f64, cfg: &PreprocessConfig) -> f64 {
    if value >= cfg.mask_threshold {
        value - cfg.mask_offset
    } else {
        value
    }
}

/// Per-column count of cells a stage changed.
pub type ColumnCounts = BTreeMap<String, usize>;

fn counts_for(m: &FeatureMatrix, per_col: &[usize]) -> ColumnCounts {
    m.column_names
        .iter()
        .zip(per_col)
        .filter(|(_, &c)| c > 0)
        .map(|(n, &c)| (n.clone(), c))
        .collect()
}

fn apply_unmask(m: &mut FeatureMatrix, cfg: &PreprocessConfig) -> Vec<usize> {
    let mut changed = vec![0; m.ncols()];
    for (j, name) in m.column_names.clone().iter().enumerate() {
        if !cfg.age_columns.contains(name) {
            continue;
        }
        for i in 0..m.nrows() {
            if let Some(v) = m.get(i, j) {
                let u = unmask_age(v, cfg);
                if u != v {
                    m.set(i, j, Some(u));
                    changed[j] += 1;
                }
            }
        }
    }
    changed
}

fn check_known_columns(m: &FeatureMatrix, cfg: &PreprocessConfig) -> Result<()> {
    for name in cfg.validity_ranges.keys().chain(&cfg.zero_is_missing) {
        if m.column_index(name).is_none() {
            return Err(Error::UnknownFeature(name.clone()));
        }
    }
    Ok(())
}

fn apply_scrub(m: &mut FeatureMatrix, cfg: &PreprocessConfig) -> Vec<usize> {
    let mut changed = vec![0; m.ncols()];
    for j in 0..m.ncols() {
        let name = &m.column_names[j];
        let zero_missing = cfg.zero_is_missing.contains(name);
        let range = cfg.validity_ranges.get(name).copied();
        if !zero_missing && range.is_none() {
            continue;
        }
        for i in 0..m.nrows() {
            let Some(v) = m.get(i, j) else { continue };
            let invalid = (zero_missing && v == 0.0) || range.map_or(false, |(lo, hi)| v < lo || v > hi);
            if invalid {
                m.set(i, j, None);
                changed[j] += 1;
            }
        }
    }
    changed
}

/// Zero placeholders and out-of-range values become missing.
pub fn scrub_invalid(m: &mut FeatureMatrix, cfg: &PreprocessConfig) -> Result<ColumnCounts> {
    check_known_columns(m, cfg)?;
    let changed = apply_scrub(m, cfg);
    Ok(counts_for(m, &changed))
}

/// Quantile with linear interpolation between closest ranks of sorted
/// data (type 7).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn observed(m: &FeatureMatrix, rows: &[usize], j: usize) -> Vec<f64> {
    rows.iter().filter_map(|&i| m.get(i, j)).collect()
}

fn sorted_observed(m: &FeatureMatrix, rows: &[usize], j: usize) -> Vec<f64> {
    let mut v = observed(m, rows, j);
    v.sort_by(f64::total_cmp);
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fence {
    pub q1: f64,
    pub q3: f64,
    pub low: f64,
    pub high: f64,
}

fn outlier_applies(m: &FeatureMatrix, j: usize, cfg: &PreprocessConfig) -> bool {
    m.column_groups[j] != FeatureGroup::TextEmbedding && !cfg.iqr_exempt.contains(&m.column_names[j])
}

/// Per-column fences; `None` for exempt columns and columns with fewer
/// than four observed values.
fn fit_fences(m: &FeatureMatrix, rows: &[usize], cfg: &PreprocessConfig) -> (Vec<Option<Fence>>, Vec<String>) {
    let mut skipped = Vec::new();
    let fences = (0..m.ncols())
        .map(|j| {
            if !outlier_applies(m, j, cfg) {
                return None;
            }
            let sorted = sorted_observed(m, rows, j);
            if sorted.len() < 4 {
                log::warn!("column {}: fewer than 4 values, IQR rule skipped", m.column_names[j]);
                skipped.push(m.column_names[j].clone());
                return None;
            }
            let q1 = quantile_sorted(&sorted, 0.25);
            let q3 = quantile_sorted(&sorted, 0.75);
            let iqr = q3 - q1;
            Some(Fence {
                q1,
                q3,
                low: q1 - cfg.iqr_multiplier * iqr,
                high: q3 + cfg.iqr_multiplier * iqr,
            })
        })
        .collect();
    (fences, skipped)
}

fn apply_fences(m: &mut FeatureMatrix, fences: &[Option<Fence>]) -> Vec<usize> {
    let mut changed = vec![0; m.ncols()];
    for (j, fence) in fences.iter().enumerate() {
        let Some(f) = fence else { continue };
        for i in 0..m.nrows() {
            if let Some(v) = m.get(i, j) {
                if v < f.low || v > f.high {
                    m.set(i, j, None);
                    changed[j] += 1;
                }
            }
        }
    }
    changed
}

/// Values outside [Q1 − k·IQR, Q3 + k·IQR] become missing.
pub fn remove_outliers_iqr(m: &mut FeatureMatrix, cfg: &PreprocessConfig) -> ColumnCounts {
    let rows: Vec<usize> = (0..m.nrows()).collect();
    let (fences, _) = fit_fences(m, &rows, cfg);
    let changed = apply_fences(m, &fences);
    counts_for(m, &changed)
}

fn fit_means(m: &FeatureMatrix, rows: &[usize]) -> Result<Vec<f64>> {
    (0..m.ncols())
        .map(|j| {
            let obs = observed(m, rows, j);
            if obs.is_empty() {
                return Err(Error::AllMissingColumn(m.column_names[j].clone()));
            }
            Ok(obs.iter().sum::<f64>() / obs.len() as f64)
        })
        .collect()
}

fn apply_means(m: &mut FeatureMatrix, means: &[f64]) -> Vec<usize> {
    let mut changed = vec![0; m.ncols()];
    for (j, &mean) in means.iter().enumerate() {
        for i in 0..m.nrows() {
            if m.missing[[i, j]] {
                m.set(i, j, Some(mean));
                changed[j] += 1;
            }
        }
    }
    changed
}

/// Missing cells take the mean of their column's observed values.
pub fn impute_mean(m: &mut FeatureMatrix) -> Result<ColumnCounts> {
    let rows: Vec<usize> = (0..m.nrows()).collect();
    let means = fit_means(m, &rows)?;
    let changed = apply_means(m, &means);
    Ok(counts_for(m, &changed))
}

fn fit_ranges(m: &FeatureMatrix, rows: &[usize]) -> Vec<(f64, f64)> {
    (0..m.ncols())
        .map(|j| {
            observed(m, rows, j)
                .into_iter()
                .fold(None, |acc: Option<(f64, f64)>, v| match acc {
                    None => Some((v, v)),
                    Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
                })
                .unwrap_or((0.0, 0.0))
        })
        .collect()
}

fn apply_ranges(m: &mut FeatureMatrix, ranges: &[(f64, f64)]) -> Vec<usize> {
    let mut changed = vec![0; m.ncols()];
    for (j, &(lo, hi)) in ranges.iter().enumerate() {
        let span = hi - lo;
        for i in 0..m.nrows() {
            let Some(v) = m.get(i, j) else { continue };
            let scaled = if span > 0.0 { ((v - lo) / span).clamp(0.0, 1.0) } else { 0.0 };
            if scaled != v {
                m.set(i, j, Some(scaled));
                changed[j] += 1;
            }
        }
    }
    changed
}

/// Per-column (x − min) / (max − min); constant columns map to 0.
pub fn normalize_minmax(m: &mut FeatureMatrix) -> ColumnCounts {
    let rows: Vec<usize> = (0..m.nrows()).collect();
    let ranges = fit_ranges(m, &rows);
    let changed = apply_ranges(m, &ranges);
    counts_for(m, &changed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageAudit {
    pub stage: String,
    pub cells_changed: usize,
    pub per_column: ColumnCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Audit {
    pub fit_scope: FitScope,
    pub rows: usize,
    pub columns: usize,
    pub stages: Vec<StageAudit>,
    pub iqr_skipped_columns: Vec<String>,
    pub missing_after: usize,
}

impl Audit {
    pub fn stage(&self, name: &str) -> Option<&StageAudit> {
        self.stages.iter().find(|s| s.stage == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum FittedStage {
    Scrub,
    Outliers(Vec<Option<Fence>>),
    Impute(Vec<f64>),
    Normalize(Vec<(f64, f64)>),
}

/// Preprocessing statistics fit on a set of rows, applicable to any
/// matrix with the same columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedPipeline {
    config: PreprocessConfig,
    column_names: Vec<String>,
    stages: Vec<FittedStage>,
    iqr_skipped: Vec<String>,
    stats: Vec<ColumnStats>,
}

impl FittedPipeline {
    /// Runs the stages over `rows` of `m` in configured order, recording
    /// each stage's statistics as they are fit.
    pub fn fit(m: &FeatureMatrix, rows: &[usize], cfg: &PreprocessConfig) -> Result<FittedPipeline> {
        cfg.validate()?;
        check_known_columns(m, cfg)?;
        let mut train = m.select_rows(rows);
        let all: Vec<usize> = (0..train.nrows()).collect();
        apply_unmask(&mut train, cfg);

        let d = m.ncols();
        let mut stats = vec![
            ColumnStats {
                mean: 0.0,
                min: 0.0,
                max: 0.0,
                q1: 0.0,
                q3: 0.0
            };
            d
        ];
        let mut stages = Vec::with_capacity(cfg.stage_order.len());
        let mut iqr_skipped = Vec::new();
        for stage in &cfg.stage_order {
            let fitted = match stage {
                Stage::Scrub => {
                    apply_scrub(&mut train, cfg);
                    FittedStage::Scrub
                }
                Stage::Outliers => {
                    for (j, s) in stats.iter_mut().enumerate() {
                        let sorted = sorted_observed(&train, &all, j);
                        if !sorted.is_empty() {
                            s.q1 = quantile_sorted(&sorted, 0.25);
                            s.q3 = quantile_sorted(&sorted, 0.75);
                        }
                    }
                    let (fences, skipped) = fit_fences(&train, &all, cfg);
                    iqr_skipped = skipped;
                    apply_fences(&mut train, &fences);
                    FittedStage::Outliers(fences)
                }
                Stage::Impute => {
                    let means = fit_means(&train, &all)?;
                    for (s, &mean) in stats.iter_mut().zip(&means) {
                        s.mean = mean;
                    }
                    apply_means(&mut train, &means);
                    FittedStage::Impute(means)
                }
                Stage::Normalize => {
                    let ranges = fit_ranges(&train, &all);
                    for (s, &(lo, hi)) in stats.iter_mut().zip(&ranges) {
                        s.min = lo;
                        s.max = hi;
                    }
                    apply_ranges(&mut train, &ranges);
                    FittedStage::Normalize(ranges)
                }
            };
            stages.push(fitted);
        }
        Ok(FittedPipeline {
            config: cfg.clone(),
            column_names: m.column_names.clone(),
            stages,
            iqr_skipped,
            stats,
        })
    }

    pub fn config(&self) -> &PreprocessConfig {
        &self.config
    }

    pub fn stats(&self) -> &[ColumnStats] {
        &self.stats
    }

    /// Applies the fitted stages to every row of `m`.
    pub fn transform(&self, m: &FeatureMatrix) -> Result<(FeatureMatrix, Audit)> {
        if m.column_names != self.column_names {
            return Err(Error::InvalidMatrix("columns differ from the fitted pipeline".into()));
        }
        let mut out = m.clone();
        let mut audits = Vec::with_capacity(self.stages.len() + 1);
        let mut record = |name: &str, out: &FeatureMatrix, changed: Vec<usize>| {
            audits.push(StageAudit {
                stage: name.to_string(),
                cells_changed: changed.iter().sum(),
                per_column: counts_for(out, &changed),
            });
        };
        let changed = apply_unmask(&mut out, &self.config);
        record("unmask_age", &out, changed);
        for (stage, fitted) in self.config.stage_order.iter().zip(&self.stages) {
            let changed = match fitted {
                FittedStage::Scrub => apply_scrub(&mut out, &self.config),
                FittedStage::Outliers(f) => apply_fences(&mut out, f),
                FittedStage::Impute(means) => apply_means(&mut out, means),
                FittedStage::Normalize(ranges) => apply_ranges(&mut out, ranges),
            };
            record(stage.as_str(), &out, changed);
        }
        out.fit_stats = Some(self.stats.clone());
        let audit = Audit {
            fit_scope: self.config.fit_scope,
            rows: out.nrows(),
            columns: out.ncols(),
            stages: audits,
            iqr_skipped_columns: self.iqr_skipped.clone(),
            missing_after: out.missing_count(),
        };
        Ok((out, audit))
    }
}

/// Fits on every row and transforms; fails if cells remain missing.
pub fn fit_transform(m: &FeatureMatrix, cfg: &PreprocessConfig) -> Result<(FeatureMatrix, Audit)> {
    let rows: Vec<usize> = (0..m.nrows()).collect();
    let fitted = FittedPipeline::fit(m, &rows, cfg)?;
    let (out, audit) = fitted.transform(m)?;
    if audit.missing_after > 0 {
        return Err(Error::IncompletePipeline(audit.missing_after));
    }
    Ok((out, audit))
}

/// Structured features of `records` as a matrix in schema order.
pub fn structured_matrix(records: &[AdmissionRecord], schema: &Schema) -> Result<FeatureMatrix> {
    let (n, d) = (records.len(), schema.len());
    let mut values = Array2::zeros((n, d));
    let mut missing = Array2::from_elem((n, d), true);
    for (i, rec) in records.iter().enumerate() {
        for (j, spec) in schema.features.iter().enumerate() {
            if let Some(v) = rec.feature(spec.group, &spec.name) {
                values[[i, j]] = v;
                missing[[i, j]] = false;
            }
        }
    }
    FeatureMatrix::new(
        values,
        schema.features.iter().map(|f| f.name.clone()).collect(),
        schema.features.iter().map(|f| f.group).collect(),
        missing,
    )
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub dataset: LabeledDataset,
    /// Admission ids of the dataset rows, in row order.
    pub admission_ids: Vec<String>,
    pub audit: Audit,
}

/// Labelled records → cleaned, normalized structured dataset. Records
/// without a label are dropped.
pub fn run_pipeline(records: &[AdmissionRecord], schema: &Schema, cfg: &PreprocessConfig) -> Result<PipelineOutput> {
    let kept: Vec<&AdmissionRecord> = records.iter().filter(|r| r.label.is_some()).collect();
    let owned: Vec<AdmissionRecord> = kept.iter().map(|r| (*r).clone()).collect();
    let raw = structured_matrix(&owned, schema)?;
    let (features, audit) = fit_transform(&raw, cfg)?;
    let labels = kept.iter().map(|r| r.label.expect("filtered")).collect();
    Ok(PipelineOutput {
        dataset: LabeledDataset::new(features, labels)?,
        admission_ids: kept.iter().map(|r| r.admission_id.clone()).collect(),
        audit,
    })
}
