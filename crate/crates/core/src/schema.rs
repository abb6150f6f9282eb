//! Structured feature schema: the ordered list of cohort CSV feature
//! columns with their group, kind and validity rules.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::domain::FeatureGroup;
use crate::error::{Error, Result};

/// How duplicate rows of one admission are merged, and which
/// preprocessing rules apply to the column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// 0/1 flag; duplicates are unioned.
    Indicator,
    /// Non-negative count; duplicates are summed.
    Count,
    /// Continuous measurement; duplicates must agree.
    Scalar,
    /// Scalar age in years, subject to the +211 masking rule.
    Age,
}

impl FeatureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Indicator => "indicator",
            FeatureKind::Count => "count",
            FeatureKind::Scalar => "scalar",
            FeatureKind::Age => "age",
        }
    }

    pub fn is_continuous(self) -> bool {
        matches!(self, FeatureKind::Scalar | FeatureKind::Age)
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "indicator" => Ok(FeatureKind::Indicator),
            "count" => Ok(FeatureKind::Count),
            "scalar" => Ok(FeatureKind::Scalar),
            "age" => Ok(FeatureKind::Age),
            other => Err(Error::InvalidConfig(format!("unknown feature kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub group: FeatureGroup,
    pub kind: FeatureKind,
    /// Biologically plausible closed range; values outside are scrubbed.
    pub valid: Option<(f64, f64)>,
    /// Exact zeros are placeholders ("see comment") rather than values.
    pub zero_is_missing: bool,
}

impl FeatureSpec {
    fn new(name: &str, group: FeatureGroup, kind: FeatureKind) -> Self {
        FeatureSpec {
            name: name.to_string(),
            group,
            kind,
            valid: None,
            zero_is_missing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub features: Vec<FeatureSpec>,
}

pub const SCHEMA_HEADER: [&str; 6] = ["name", "group", "kind", "valid_min", "valid_max", "zero_is_missing"];

const ADMISSION: [(&str, FeatureKind); 5] = [
    ("los_days", FeatureKind::Scalar),
    ("discharge_home", FeatureKind::Indicator),
    ("discharge_snf", FeatureKind::Indicator),
    ("er_dx_ami", FeatureKind::Indicator),
    ("er_dx_rule_out_ami", FeatureKind::Indicator),
];

const DEMOGRAPHICS: [(&str, FeatureKind); 6] = [
    ("age", FeatureKind::Age),
    ("gender_male", FeatureKind::Indicator),
    ("ethnicity_white", FeatureKind::Indicator),
    ("marital_married", FeatureKind::Indicator),
    ("religion_catholic", FeatureKind::Indicator),
    ("insurance_medicare", FeatureKind::Indicator),
];

const TREATMENT: [(&str, FeatureKind); 10] = [
    ("tx_cardiac_cath", FeatureKind::Indicator),
    ("tx_defibrillator", FeatureKind::Indicator),
    ("tx_heart_assist", FeatureKind::Indicator),
    ("tx_pci", FeatureKind::Indicator),
    ("tx_cabg", FeatureKind::Indicator),
    ("tx_pacemaker", FeatureKind::Indicator),
    ("tx_ventilation", FeatureKind::Indicator),
    ("tx_dialysis", FeatureKind::Indicator),
    ("tx_transfusion", FeatureKind::Indicator),
    ("tx_procedure_count", FeatureKind::Count),
];

const COMORBIDITY: [&str; 18] = [
    "cm_cancer",
    "cm_endocrine",
    "cm_diabetes",
    "cm_hypertension",
    "cm_heart_failure",
    "cm_arrhythmia",
    "cm_valvular",
    "cm_pulmonary",
    "cm_renal",
    "cm_liver",
    "cm_neurologic",
    "cm_obesity",
    "cm_anemia",
    "cm_coagulopathy",
    "cm_depression",
    "cm_substance",
    "cm_peripheral_vascular",
    "cm_stroke",
];

/// Lab tests (zeros are placeholders) with validity ranges.
const LABS: [(&str, f64, f64); 28] = [
    ("lab_cholesterol_ratio", 0.5, 20.0),
    ("lab_alt", 1.0, 5000.0),
    ("lab_ast", 1.0, 5000.0),
    ("lab_troponin_t", 0.001, 50.0),
    ("lab_ck_mb", 0.1, 1000.0),
    ("lab_creatinine", 0.1, 25.0),
    ("lab_bun", 1.0, 250.0),
    ("lab_sodium", 100.0, 180.0),
    ("lab_potassium", 1.5, 10.0),
    ("lab_chloride", 60.0, 150.0),
    ("lab_bicarbonate", 2.0, 60.0),
    ("lab_glucose", 10.0, 1500.0),
    ("lab_hemoglobin", 2.0, 25.0),
    ("lab_hematocrit", 5.0, 75.0),
    ("lab_wbc", 0.1, 200.0),
    ("lab_platelets", 1.0, 2000.0),
    ("lab_inr", 0.5, 20.0),
    ("lab_pt", 5.0, 150.0),
    ("lab_ptt", 10.0, 200.0),
    ("lab_albumin", 0.5, 7.0),
    ("lab_bilirubin", 0.05, 60.0),
    ("lab_lactate", 0.1, 30.0),
    ("lab_magnesium", 0.3, 8.0),
    ("lab_calcium", 3.0, 20.0),
    ("lab_phosphate", 0.3, 20.0),
    ("lab_bnp", 1.0, 50000.0),
    ("lab_ldl", 5.0, 500.0),
    ("lab_hdl", 2.0, 200.0),
];

/// Chart values with validity ranges.
const CHARTS: [(&str, f64, f64); 12] = [
    ("chart_heart_rate", 20.0, 300.0),
    ("chart_sbp", 30.0, 300.0),
    ("chart_dbp", 10.0, 200.0),
    ("chart_mean_bp", 20.0, 250.0),
    ("chart_resp_rate", 2.0, 80.0),
    ("chart_temperature", 25.0, 45.0),
    ("chart_spo2", 40.0, 100.0),
    ("chart_gcs", 3.0, 15.0),
    ("chart_weight", 20.0, 300.0),
    ("chart_urine_output", 0.0, 10000.0),
    ("chart_cvp", -5.0, 40.0),
    ("chart_cardiac_index", 0.3, 10.0),
];

impl Schema {
    /// The default 79-column layout: Admission 5, Demographics 6,
    /// Treatment 10, Comorbidity 18, LabChart 40.
    pub fn default_79() -> Schema {
        let mut features = Vec::with_capacity(79);
        for (name, kind) in ADMISSION {
            let mut f = FeatureSpec::new(name, FeatureGroup::Admission, kind);
            if name == "los_days" {
                f.valid = Some((0.0, 365.0));
            }
            features.push(f);
        }
        for (name, kind) in DEMOGRAPHICS {
            let mut f = FeatureSpec::new(name, FeatureGroup::Demographics, kind);
            if kind == FeatureKind::Age {
                f.valid = Some((15.0, 120.0));
            }
            features.push(f);
        }
        for (name, kind) in TREATMENT {
            features.push(FeatureSpec::new(name, FeatureGroup::Treatment, kind));
        }
        for name in COMORBIDITY {
            features.push(FeatureSpec::new(name, FeatureGroup::Comorbidity, FeatureKind::Indicator));
        }
        for (name, lo, hi) in LABS {
            let mut f = FeatureSpec::new(name, FeatureGroup::LabChart, FeatureKind::Scalar);
            f.valid = Some((lo, hi));
            f.zero_is_missing = true;
            features.push(f);
        }
        for (name, lo, hi) in CHARTS {
            let mut f = FeatureSpec::new(name, FeatureGroup::LabChart, FeatureKind::Scalar);
            f.valid = Some((lo, hi));
            features.push(f);
        }
        Schema { features }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.features.iter().map(|f| f.name.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&FeatureSpec> {
        self.features.iter().find(|f| f.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for f in &self.features {
            if f.name.is_empty() {
                return Err(Error::InvalidConfig("empty feature name in schema".into()));
            }
            if !seen.insert(f.name.as_str()) {
                return Err(Error::InvalidConfig(format!("duplicate feature {:?}", f.name)));
            }
            if f.group == FeatureGroup::TextEmbedding {
                return Err(Error::InvalidConfig(format!(
                    "feature {:?}: text columns come from embeddings, not the cohort file",
                    f.name
                )));
            }
            if let Some((lo, hi)) = f.valid {
                if !(lo < hi) {
                    return Err(Error::InvalidConfig(format!(
                        "feature {:?}: valid range requires min < max",
                        f.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Schema> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| csv_error(path, e))?;
        let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
        if header.iter().ne(SCHEMA_HEADER.iter().copied()) {
            return Err(Error::SchemaMismatch {
                path: path.to_path_buf(),
                detail: format!("expected header {:?}", SCHEMA_HEADER.join(",")),
            });
        }
        let mut features = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| csv_error(path, e))?;
            let line = record.position().map_or(0, |p| p.line());
            let bad = |detail: String| Error::MalformedRow {
                path: path.to_path_buf(),
                line,
                detail,
            };
            let group: FeatureGroup = record[1].parse().map_err(|e: Error| bad(e.to_string()))?;
            let kind: FeatureKind = record[2].parse().map_err(|e: Error| bad(e.to_string()))?;
            let valid = match (record[3].trim(), record[4].trim()) {
                ("", "") => None,
                (lo, hi) => {
                    let lo: f64 = lo.parse().map_err(|_| bad(format!("bad valid_min {lo:?}")))?;
                    let hi: f64 = hi.parse().map_err(|_| bad(format!("bad valid_max {hi:?}")))?;
                    Some((lo, hi))
                }
            };
            let zero_is_missing = match record[5].trim() {
                "1" | "true" => true,
                "0" | "false" | "" => false,
                other => return Err(bad(format!("bad zero_is_missing {other:?}"))),
            };
            features.push(FeatureSpec {
                name: record[0].trim().to_string(),
                group,
                kind,
                valid,
                zero_is_missing,
            });
        }
        let schema = Schema { features };
        schema.validate()?;
        Ok(schema)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str(&SCHEMA_HEADER.join(","));
        out.push('\n');
        for f in &self.features {
            let (lo, hi) = match f.valid {
                Some((lo, hi)) => (lo.to_string(), hi.to_string()),
                None => (String::new(), String::new()),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                f.name,
                f.group,
                f.kind,
                lo,
                hi,
                u8::from(f.zero_is_missing)
            ));
        }
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::MalformedRow {
            path: path.to_path_buf(),
            line,
            detail: format!("{other:?}"),
        },
    }
}
