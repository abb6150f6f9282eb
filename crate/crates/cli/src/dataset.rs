//! On-disk prepared datasets: `dataset.csv` (normalized), `raw.csv`
//! (unprocessed, blank cells missing) and `dataset.meta.json`.
//!
//! Values are written in shortest round-trip form, so reading back gives
//! bit-identical matrices.

use std::path::Path;

use amifuse::assemble::RawCohort;
use amifuse::preprocess::PreprocessConfig;
use amifuse::{ColumnStats, FeatureGroup, FeatureMatrix, LabeledDataset};
use anyhow::{bail, ensure, Context, Result};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub const FORMAT: &str = "amifuse-dataset";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format: String,
    pub version: u32,
    pub rows: usize,
    pub columns: Vec<String>,
    pub groups: Vec<FeatureGroup>,
    pub positive_fraction: f64,
    pub fit_stats: Option<Vec<ColumnStats>>,
    pub preprocess: PreprocessConfig,
}

#[derive(Debug, Clone)]
pub struct StoredDataset {
    pub meta: DatasetMeta,
    pub admission_ids: Vec<String>,
    pub labels: Vec<bool>,
    pub prepared: LabeledDataset,
    pub raw: FeatureMatrix,
}

fn write_matrix(path: &Path, ids: &[String], labels: &[bool], m: &FeatureMatrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    let mut header = vec!["admission_id".to_string(), "label".to_string()];
    header.extend(m.column_names.iter().cloned());
    w.write_record(&header)?;
    for (i, (id, &y)) in ids.iter().zip(labels).enumerate() {
        let mut rec = Vec::with_capacity(m.ncols() + 2);
        rec.push(id.clone());
        rec.push(u8::from(y).to_string());
        rec.extend((0..m.ncols()).map(|j| m.get(i, j).map(|v| v.to_string()).unwrap_or_default()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dataset(dir: &Path, raw: &RawCohort, prepared: &LabeledDataset, cfg: &PreprocessConfig) -> Result<()> {
    write_matrix(&dir.join("dataset.csv"), &raw.admission_ids, &prepared.labels, &prepared.features)?;
    write_matrix(&dir.join("raw.csv"), &raw.admission_ids, &raw.labels, &raw.features)?;
    let meta = DatasetMeta {
        format: FORMAT.into(),
        version: VERSION,
        rows: prepared.len(),
        columns: prepared.features.column_names.clone(),
        groups: prepared.features.column_groups.clone(),
        positive_fraction: if prepared.is_empty() { 0.0 } else { prepared.positive_fraction() },
        fit_stats: prepared.features.fit_stats.clone(),
        preprocess: cfg.clone(),
    };
    let path = dir.join("dataset.meta.json");
    std::fs::write(&path, serde_json::to_string_pretty(&meta)?).with_context(|| format!("writing {}", path.display()))
}

struct Table {
    ids: Vec<String>,
    labels: Vec<bool>,
    values: Array2<f64>,
    missing: Array2<bool>,
}

fn read_matrix(path: &Path, meta: &DatasetMeta) -> Result<Table> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let header = r.headers()?.clone();
    let names: Vec<&str> = header.iter().skip(2).collect();
    ensure!(
        names == meta.columns.iter().map(String::as_str).collect::<Vec<_>>(),
        "{}: columns do not match dataset.meta.json",
        path.display()
    );
    let d = names.len();
    let (mut ids, mut labels, mut flat, mut missing) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        ensure!(rec.len() == d + 2, "{}:{line}: expected {} fields", path.display(), d + 2);
        ids.push(rec[0].to_string());
        labels.push(match &rec[1] {
            "1" => true,
            "0" => false,
            other => bail!("{}:{line}: bad label {other:?}", path.display()),
        });
        for cell in rec.iter().skip(2) {
            if cell.is_empty() {
                flat.push(0.0);
                missing.push(true);
            } else {
                let v: f64 = cell
                    .parse()
                    .with_context(|| format!("{}:{line}: bad value {cell:?}", path.display()))?;
                flat.push(v);
                missing.push(false);
            }
        }
    }
    let n = ids.len();
    Ok(Table {
        ids,
        labels,
        values: Array2::from_shape_vec((n, d), flat)?,
        missing: Array2::from_shape_vec((n, d), missing)?,
    })
}

pub fn read_dataset(dir: &Path) -> Result<StoredDataset> {
    let path = dir.join("dataset.meta.json");
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let meta: DatasetMeta = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    ensure!(meta.format == FORMAT, "{}: unknown format {:?}", path.display(), meta.format);
    ensure!(
        meta.version == VERSION,
        "{}: unsupported version {} (expected {VERSION})",
        path.display(),
        meta.version
    );
    let prepared = read_matrix(&dir.join("dataset.csv"), &meta)?;
    let raw = read_matrix(&dir.join("raw.csv"), &meta)?;
    ensure!(prepared.ids == raw.ids, "dataset.csv and raw.csv list different admissions");
    ensure!(prepared.ids.len() == meta.rows, "row count does not match dataset.meta.json");
    let mut features = FeatureMatrix::new(
        prepared.values,
        meta.columns.clone(),
        meta.groups.clone(),
        prepared.missing,
    )?;
    features.fit_stats = meta.fit_stats.clone();
    let raw_features = FeatureMatrix::new(raw.values, meta.columns.clone(), meta.groups.clone(), raw.missing)?;
    Ok(StoredDataset {
        prepared: LabeledDataset::new(features, prepared.labels.clone())?,
        admission_ids: prepared.ids,
        labels: raw.labels,
        raw: raw_features,
        meta,
    })
}
