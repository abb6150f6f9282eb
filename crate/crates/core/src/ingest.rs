//! Cohort CSV parsing, ICD-9 cohort selection, admission deduplication
//! and one-year mortality labelling.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;

use crate::domain::AdmissionRecord;
use crate::error::{Error, Result};
use crate::schema::{csv_error, FeatureKind, Schema};

/// Leading cohort CSV columns; schema features follow in schema order.
pub const FIXED_COLUMNS: [&str; 6] = [
    "admission_id",
    "subject_id",
    "icd9_code",
    "admit_date",
    "death_date",
    "note_id",
];

pub const DATE_FORMAT: &str = "%Y-%m-%d";

#[derive(Debug, Clone, PartialEq)]
pub struct RawAdmissionRow {
    pub admission_id: String,
    pub subject_id: String,
    pub icd9_code: String,
    pub admit_date: NaiveDate,
    pub death_date: Option<NaiveDate>,
    pub note_id: Option<String>,
    /// One entry per schema feature, in schema order.
    pub features: Vec<Option<f64>>,
    /// 1-based line in the source file (0 for in-memory rows).
    pub line: u64,
}

pub fn cohort_header(schema: &Schema) -> Vec<String> {
    FIXED_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .chain(schema.names().map(String::from))
        .collect()
}

pub fn parse_cohort(path: &Path, schema: &Schema) -> Result<Vec<RawAdmissionRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let expected = cohort_header(schema);
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.len() != expected.len() || header.iter().zip(&expected).any(|(a, b)| a != b) {
        let first_diff = header
            .iter()
            .zip(&expected)
            .position(|(a, b)| a != b)
            .unwrap_or_else(|| header.len().min(expected.len()));
        return Err(Error::SchemaMismatch {
            path: path.to_path_buf(),
            detail: format!(
                "{} columns (expected {}); first difference at column {}: found {:?}, expected {:?}",
                header.len(),
                expected.len(),
                first_diff + 1,
                header.get(first_diff).unwrap_or(""),
                expected.get(first_diff).map(String::as_str).unwrap_or("")
            ),
        });
    }

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |detail: String| Error::MalformedRow {
            path: path.to_path_buf(),
            line,
            detail,
        };
        if record.len() != expected.len() {
            return Err(bad(format!(
                "expected {} fields, found {}",
                expected.len(),
                record.len()
            )));
        }
        let admission_id = record[0].trim().to_string();
        let subject_id = record[1].trim().to_string();
        if admission_id.is_empty() || subject_id.is_empty() {
            return Err(bad("admission_id and subject_id must be non-empty".into()));
        }
        let admit_date = parse_date(&record[3]).map_err(|d| bad(format!("admit_date: {d}")))?;
        let admit_date = admit_date.ok_or_else(|| bad("admit_date is required".into()))?;
        let death_date = parse_date(&record[4]).map_err(|d| bad(format!("death_date: {d}")))?;
        let note_id = Some(record[5].trim()).filter(|s| !s.is_empty()).map(String::from);
        let mut features = Vec::with_capacity(schema.len());
        for (cell, spec) in record.iter().skip(FIXED_COLUMNS.len()).zip(&schema.features) {
            let cell = cell.trim();
            if cell.is_empty() {
                features.push(None);
                continue;
            }
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => features.push(Some(v)),
                _ => return Err(bad(format!("{}: unparseable number {cell:?}", spec.name))),
            }
        }
        rows.push(RawAdmissionRow {
            admission_id,
            subject_id,
            icd9_code: record[2].trim().to_string(),
            admit_date,
            death_date,
            note_id,
            features,
            line,
        });
    }
    Ok(rows)
}

fn parse_date(cell: &str) -> std::result::Result<Option<NaiveDate>, String> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Ok(None);
    }
    NaiveDate::parse_from_str(cell, DATE_FORMAT)
        .map(Some)
        .map_err(|e| format!("{cell:?}: {e}"))
}

/// ICD-9 diagnosis code as an exact decimal, stored in hundredths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Icd9Code(u32);

impl Icd9Code {
    pub const AMI_LOW: Icd9Code = Icd9Code(41000);
    pub const PMI_HIGH: Icd9Code = Icd9Code(41100);

    pub fn hundredths(self) -> u32 {
        self.0
    }
}

impl FromStr for Icd9Code {
    type Err = Error;

    /// Accepts `XXX`, `XXX.Y` and `XXX.YZ` with up to three integer digits.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::UnparseableCode(s.to_string());
        let t = s.trim();
        let (int, frac) = t.split_once('.').unwrap_or((t, ""));
        if int.is_empty()
            || int.len() > 3
            || frac.len() > 2
            || (t.contains('.') && frac.is_empty())
            || !int.bytes().all(|b| b.is_ascii_digit())
            || !frac.bytes().all(|b| b.is_ascii_digit())
        {
            return Err(bad());
        }
        let int: u32 = int.parse().map_err(|_| bad())?;
        let frac = match frac.len() {
            0 => 0,
            1 => frac.parse::<u32>().map_err(|_| bad())? * 10,
            _ => frac.parse::<u32>().map_err(|_| bad())?,
        };
        Ok(Icd9Code(int * 100 + frac))
    }
}

impl fmt::Display for Icd9Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:02}", self.0 / 100, self.0 % 100)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Icd9Selection {
    pub rows: Vec<RawAdmissionRow>,
    /// Rows dropped because their code is not a decimal ICD-9 code.
    pub unparseable: usize,
}

/// Keeps rows whose code lies in the closed interval [lo, hi].
pub fn select_by_icd9(rows: Vec<RawAdmissionRow>, lo: Icd9Code, hi: Icd9Code) -> Result<Icd9Selection> {
    if lo > hi {
        return Err(Error::InvalidConfig(format!("ICD-9 range {lo} > {hi}")));
    }
    let mut unparseable = 0;
    let rows = rows
        .into_iter()
        .filter(|row| match row.icd9_code.parse::<Icd9Code>() {
            Ok(code) => lo <= code && code <= hi,
            Err(_) => {
                unparseable += 1;
                false
            }
        })
        .collect();
    if unparseable > 0 {
        log::warn!("skipped {unparseable} rows with unparseable ICD-9 codes");
    }
    Ok(Icd9Selection { rows, unparseable })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Deduplicated {
    pub records: Vec<AdmissionRecord>,
    /// Scalar or identity fields on which duplicate rows disagreed.
    pub conflicts: usize,
}

/// Collapses rows to one record per admission_id, in first-seen order.
///
/// Indicators are unioned, counts summed, and scalars take the first
/// non-missing value.
pub fn deduplicate(rows: Vec<RawAdmissionRow>, schema: &Schema) -> Deduplicated {
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<RawAdmissionRow>> = HashMap::new();
    for row in rows {
        let key = row.admission_id.clone();
        groups
            .entry(key)
            .or_insert_with_key(|k| {
                order.push(k.clone());
                Vec::new()
            })
            .push(row);
    }

    let mut conflicts = 0;
    let mut records = Vec::with_capacity(order.len());
    for id in order {
        let rows = groups.remove(&id).expect("grouped above");
        let first = &rows[0];
        for other in &rows[1..] {
            if other.subject_id != first.subject_id
                || other.admit_date != first.admit_date
                || other.death_date != first.death_date
            {
                conflicts += 1;
                log::warn!("admission {id}: duplicate rows disagree on identity fields; keeping first");
            }
        }

        let mut structured: BTreeMap<_, BTreeMap<String, Option<f64>>> = BTreeMap::new();
        for (j, spec) in schema.features.iter().enumerate() {
            let observed = rows.iter().filter_map(|r| r.features[j]);
            let value = match spec.kind {
                FeatureKind::Indicator => observed
                    .map(|v| if v != 0.0 { 1.0 } else { 0.0 })
                    .reduce(f64::max),
                FeatureKind::Count => observed.reduce(|a, b| a + b),
                FeatureKind::Scalar | FeatureKind::Age => {
                    let mut observed = observed;
                    let first_value = observed.next();
                    if let Some(v) = first_value {
                        if observed.any(|w| w != v) {
                            conflicts += 1;
                            log::warn!("admission {id}: conflicting {} values; keeping first", spec.name);
                        }
                    }
                    first_value
                }
            };
            structured
                .entry(spec.group)
                .or_default()
                .insert(spec.name.clone(), value);
        }

        records.push(AdmissionRecord {
            admission_id: id,
            subject_id: first.subject_id.clone(),
            icd9_codes: rows.iter().map(|r| r.icd9_code.clone()).collect(),
            admit_date: first.admit_date,
            death_date: first.death_date,
            structured,
            discharge_summary: None,
            label: None,
        });
    }
    Deduplicated { records, conflicts }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelPolicy {
    pub horizon_days: i64,
    /// Whether a death exactly `horizon_days` after admission is positive.
    pub inclusive: bool,
}

impl Default for LabelPolicy {
    fn default() -> Self {
        LabelPolicy {
            horizon_days: 365,
            inclusive: true,
        }
    }
}

/// Labels each record; returns ids of records whose death date precedes
/// admission (their label is cleared).
pub fn assign_labels(records: &mut [AdmissionRecord], policy: LabelPolicy) -> Result<Vec<String>> {
    if policy.horizon_days <= 0 {
        return Err(Error::InvalidConfig(format!(
            "horizon_days must be positive, got {}",
            policy.horizon_days
        )));
    }
    let mut flagged = Vec::new();
    for rec in records.iter_mut() {
        rec.label = match rec.death_date {
            None => Some(false),
            Some(death) => {
                let days = (death - rec.admit_date).num_days();
                if days < 0 {
                    let err = Error::NegativeInterval {
                        admission_id: rec.admission_id.clone(),
                    };
                    log::warn!("{err}");
                    flagged.push(rec.admission_id.clone());
                    None
                } else if policy.inclusive {
                    Some(days <= policy.horizon_days)
                } else {
                    Some(days < policy.horizon_days)
                }
            }
        };
    }
    Ok(flagged)
}

/// Reads `admission_id<TAB>text` lines.
pub fn load_summaries(path: &Path) -> Result<BTreeMap<String, String>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let (id, text) = line.split_once('\t').ok_or_else(|| Error::MalformedRow {
            path: path.to_path_buf(),
            line: i as u64 + 1,
            detail: "expected admission_id<TAB>text".into(),
        })?;
        out.insert(id.to_string(), text.to_string());
    }
    Ok(out)
}

/// Attaches summaries by admission id; returns how many records matched.
pub fn attach_summaries(records: &mut [AdmissionRecord], summaries: &BTreeMap<String, String>) -> usize {
    let mut matched = 0;
    for rec in records.iter_mut() {
        rec.discharge_summary = summaries.get(&rec.admission_id).cloned();
        matched += usize::from(rec.discharge_summary.is_some());
    }
    matched
}

#[derive(Debug, Clone, Default, PartialEq, serde::Serialize)]
pub struct LoadStats {
    pub rows: usize,
    pub selected_rows: usize,
    pub unparseable_codes: usize,
    pub admissions: usize,
    pub dedup_conflicts: usize,
    /// Admissions left unlabelled because death precedes admission.
    pub negative_intervals: Vec<String>,
    pub summaries_matched: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedCohort {
    pub records: Vec<AdmissionRecord>,
    pub stats: LoadStats,
}

/// Parses, selects the cohort codes, deduplicates, labels and attaches
/// summaries.
pub fn load_records(
    cohort: &Path,
    summaries: Option<&Path>,
    schema: &Schema,
    policy: LabelPolicy,
) -> Result<LoadedCohort> {
    let rows = parse_cohort(cohort, schema)?;
    let mut stats = LoadStats {
        rows: rows.len(),
        ..LoadStats::default()
    };
    let sel = select_by_icd9(rows, Icd9Code::AMI_LOW, Icd9Code::PMI_HIGH)?;
    stats.selected_rows = sel.rows.len();
    stats.unparseable_codes = sel.unparseable;
    let dedup = deduplicate(sel.rows, schema);
    stats.dedup_conflicts = dedup.conflicts;
    let mut records = dedup.records;
    stats.admissions = records.len();
    stats.negative_intervals = assign_labels(&mut records, policy)?;
    if let Some(path) = summaries {
        stats.summaries_matched = attach_summaries(&mut records, &load_summaries(path)?);
    }
    Ok(LoadedCohort { records, stats })
}
