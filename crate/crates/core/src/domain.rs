//! Domain types shared by every stage.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use ndarray::{concatenate, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureGroup {
    Admission,
    Demographics,
    Treatment,
    Comorbidity,
    LabChart,
    TextEmbedding,
}

impl FeatureGroup {
    pub const ALL: [FeatureGroup; 6] = [
        FeatureGroup::Admission,
        FeatureGroup::Demographics,
        FeatureGroup::Treatment,
        FeatureGroup::Comorbidity,
        FeatureGroup::LabChart,
        FeatureGroup::TextEmbedding,
    ];

    pub const STRUCTURED: [FeatureGroup; 5] = [
        FeatureGroup::Admission,
        FeatureGroup::Demographics,
        FeatureGroup::Treatment,
        FeatureGroup::Comorbidity,
        FeatureGroup::LabChart,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureGroup::Admission => "admission",
            FeatureGroup::Demographics => "demographics",
            FeatureGroup::Treatment => "treatment",
            FeatureGroup::Comorbidity => "comorbidity",
            FeatureGroup::LabChart => "labchart",
            FeatureGroup::TextEmbedding => "text",
        }
    }

    pub fn is_structured(self) -> bool {
        self != FeatureGroup::TextEmbedding
    }
}

impl fmt::Display for FeatureGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "admission" | "admissions" => Ok(FeatureGroup::Admission),
            "demographics" | "demographic" => Ok(FeatureGroup::Demographics),
            "treatment" | "treatments" => Ok(FeatureGroup::Treatment),
            "comorbidity" | "comorbidities" => Ok(FeatureGroup::Comorbidity),
            "labchart" | "lab" | "labs" | "lab_chart" => Ok(FeatureGroup::LabChart),
            "text" | "textembedding" | "text_embedding" => Ok(FeatureGroup::TextEmbedding),
            other => Err(Error::InvalidConfig(format!("unknown feature group {other:?}"))),
        }
    }
}

/// Parses a comma-separated group list; `all` expands to every group.
pub fn parse_group_list(s: &str) -> Result<BTreeSet<FeatureGroup>> {
    let mut out = BTreeSet::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if part.eq_ignore_ascii_case("all") {
            out.extend(FeatureGroup::ALL);
        } else {
            out.insert(part.parse()?);
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidConfig("empty feature group list".into()));
    }
    Ok(out)
}

/// One deduplicated hospital admission.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmissionRecord {
    pub admission_id: String,
    pub subject_id: String,
    pub icd9_codes: BTreeSet<String>,
    pub admit_date: NaiveDate,
    pub death_date: Option<NaiveDate>,
    pub structured: BTreeMap<FeatureGroup, BTreeMap<String, Option<f64>>>,
    pub discharge_summary: Option<String>,
    /// `Some(true)` when death occurred within the labelling horizon.
    pub label: Option<bool>,
}

impl AdmissionRecord {
    pub fn feature(&self, group: FeatureGroup, name: &str) -> Option<f64> {
        self.structured.get(&group).and_then(|g| g.get(name)).copied().flatten()
    }
}

/// Fitted per-column statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub q1: f64,
    pub q3: f64,
}

/// Dense n×d matrix with per-column names, groups and a missing mask.
///
/// Cells flagged in `missing` carry no meaning in `values` (they are kept
/// at 0.0).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: Array2<f64>,
    pub column_names: Vec<String>,
    pub column_groups: Vec<FeatureGroup>,
    pub missing: Array2<bool>,
    pub fit_stats: Option<Vec<ColumnStats>>,
}

impl FeatureMatrix {
    /// Values under the missing mask are reset to 0.0.
    pub fn new(
        mut values: Array2<f64>,
        column_names: Vec<String>,
        column_groups: Vec<FeatureGroup>,
        missing: Array2<bool>,
    ) -> Result<Self> {
        let d = values.ncols();
        if column_names.len() != d || column_groups.len() != d {
            return Err(Error::InvalidMatrix(format!(
                "{} columns but {} names and {} groups",
                d,
                column_names.len(),
                column_groups.len()
            )));
        }
        if missing.dim() != values.dim() {
            return Err(Error::InvalidMatrix("missing mask shape differs from values".into()));
        }
        let mut seen = HashSet::with_capacity(d);
        for name in &column_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidMatrix(format!("duplicate column name {name:?}")));
            }
        }
        values.zip_mut_with(&missing, |v, &m| {
            if m {
                *v = 0.0;
            }
        });
        Ok(FeatureMatrix {
            values,
            column_names,
            column_groups,
            missing,
            fit_stats: None,
        })
    }

    /// A matrix with no missing cells.
    pub fn dense(
        values: Array2<f64>,
        column_names: Vec<String>,
        column_groups: Vec<FeatureGroup>,
    ) -> Result<Self> {
        let missing = Array2::from_elem(values.dim(), false);
        Self::new(values, column_names, column_groups, missing)
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name)
    }

    pub fn missing_count(&self) -> usize {
        self.missing.iter().filter(|&&m| m).count()
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        if self.missing[[row, col]] {
            None
        } else {
            Some(self.values[[row, col]])
        }
    }

    pub fn set(&mut self, row: usize, col: usize, value: Option<f64>) {
        match value {
            Some(v) => {
                self.values[[row, col]] = v;
                self.missing[[row, col]] = false;
            }
            None => {
                self.values[[row, col]] = 0.0;
                self.missing[[row, col]] = true;
            }
        }
    }

    /// No missing cells and every value in [0, 1].
    pub fn is_normalized(&self) -> bool {
        !self.missing.iter().any(|&m| m) && self.values.iter().all(|&v| (0.0..=1.0).contains(&v))
    }

    /// Keeps exactly the columns whose group is in `groups`, in order.
    pub fn select_columns(&self, groups: &BTreeSet<FeatureGroup>) -> Result<FeatureMatrix> {
        let keep: Vec<usize> = (0..self.ncols())
            .filter(|&j| groups.contains(&self.column_groups[j]))
            .collect();
        if keep.is_empty() {
            return Err(Error::NoMatchingColumns(groups.iter().copied().collect()));
        }
        Ok(FeatureMatrix {
            values: self.values.select(Axis(1), &keep),
            column_names: keep.iter().map(|&j| self.column_names[j].clone()).collect(),
            column_groups: keep.iter().map(|&j| self.column_groups[j]).collect(),
            missing: self.missing.select(Axis(1), &keep),
            fit_stats: self
                .fit_stats
                .as_ref()
                .map(|s| keep.iter().map(|&j| s[j]).collect()),
        })
    }

    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            values: self.values.select(Axis(0), rows),
            column_names: self.column_names.clone(),
            column_groups: self.column_groups.clone(),
            missing: self.missing.select(Axis(0), rows),
            fit_stats: self.fit_stats.clone(),
        }
    }

    /// Appends the columns of `other` to the right of `self`.
    pub fn hstack(&self, other: &FeatureMatrix) -> Result<FeatureMatrix> {
        if self.nrows() != other.nrows() {
            return Err(Error::InvalidMatrix(format!(
                "cannot concatenate {} rows with {} rows",
                self.nrows(),
                other.nrows()
            )));
        }
        let values = concatenate(Axis(1), &[self.values.view(), other.values.view()])
            .expect("row counts checked");
        let missing = concatenate(Axis(1), &[self.missing.view(), other.missing.view()])
            .expect("row counts checked");
        let mut names = self.column_names.clone();
        names.extend(other.column_names.iter().cloned());
        let mut groups = self.column_groups.clone();
        groups.extend(other.column_groups.iter().copied());
        let mut out = FeatureMatrix::new(values, names, groups, missing)?;
        out.fit_stats = match (&self.fit_stats, &other.fit_stats) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => None,
        };
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: FeatureMatrix,
    pub labels: Vec<bool>,
}

impl LabeledDataset {
    pub fn new(features: FeatureMatrix, labels: Vec<bool>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::InvalidMatrix(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        Ok(LabeledDataset { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn positive_fraction(&self) -> f64 {
        if self.labels.is_empty() {
            return 0.0;
        }
        self.labels.iter().filter(|&&y| y).count() as f64 / self.labels.len() as f64
    }

    pub fn select_columns(&self, groups: &BTreeSet<FeatureGroup>) -> Result<LabeledDataset> {
        Ok(LabeledDataset {
            features: self.features.select_columns(groups)?,
            labels: self.labels.clone(),
        })
    }

    pub fn select_rows(&self, rows: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select_rows(rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}
