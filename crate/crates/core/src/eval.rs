//! Repeated k-fold cross-validation, threshold metrics, exact ROC AUC,
//! precision-recall and ROC curves, and feature-group ablations.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{fit_logistic, predict_logistic, LogisticConfig};
use crate::domain::{FeatureGroup, FeatureMatrix, LabeledDataset};
use crate::error::{Error, Result};
use crate::mlp::{AnyMlp, TrainConfig};
use crate::preprocess::{FitScope, FittedPipeline, PreprocessConfig};
use crate::rng::{derive_seed, seeded};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// `k` disjoint folds covering `0..n`, from a seeded shuffle. The first
/// `n % k` folds hold one extra index.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || n < k {
        return Err(Error::InvalidK { n, k });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded(seed));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        folds.push(order[start..start + size].to_vec());
        start += size;
    }
    Ok(folds)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn add(&mut self, other: &ConfusionMatrix) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }
}

/// Predicts positive iff `score >= threshold`.
pub fn confusion(scores: &[f64], labels: &[bool], threshold: f64) -> ConfusionMatrix {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    let mut cm = ConfusionMatrix::default();
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, true) => cm.fn_ += 1,
            (false, false) => cm.tn += 1,
        }
    }
    cm
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    /// Absent when the evaluated set holds a single class.
    pub auc: Option<f64>,
}

/// Which ratios had a zero denominator and were reported as 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Degenerate {
    pub precision: bool,
    pub recall: bool,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

/// Accuracy, precision, recall and F-measure (`auc` left empty).
pub fn metrics(cm: &ConfusionMatrix) -> (MetricSet, Degenerate) {
    let (accuracy, _) = ratio(cm.tp + cm.tn, cm.total());
    let (precision, p_bad) = ratio(cm.tp, cm.tp + cm.fp);
    let (recall, r_bad) = ratio(cm.tp, cm.tp + cm.fn_);
    let f_measure = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    (
        MetricSet {
            accuracy,
            precision,
            recall,
            f_measure,
            auc: None,
        },
        Degenerate {
            precision: p_bad,
            recall: r_bad,
        },
    )
}

/// Scores sorted descending, grouped by equal score, as (positives, negatives) per group.
fn tie_groups(scores: &[f64], labels: &[bool]) -> Vec<(f64, u64, u64)> {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups: Vec<(f64, u64, u64)> = Vec::new();
    for i in idx {
        let s = scores[i];
        match groups.last_mut() {
            Some(g) if g.0 == s => {
                if labels[i] {
                    g.1 += 1
                } else {
                    g.2 += 1
                }
            }
            _ => groups.push((s, u64::from(labels[i]), u64::from(!labels[i]))),
        }
    }
    groups
}

/// Mann-Whitney AUC: P(pos > neg) + ½·P(tie), from exact integer counts.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let groups = tie_groups(scores, labels);
    let pos: u64 = groups.iter().map(|g| g.1).sum();
    let neg: u64 = groups.iter().map(|g| g.2).sum();
    if pos == 0 || neg == 0 {
        return Err(Error::OneClassOnly);
    }
    // 2·wins + ties, walking from the lowest score up
    let mut doubled: u128 = 0;
    let mut neg_below: u128 = 0;
    for &(_, p, n) in groups.iter().rev() {
        doubled += 2 * p as u128 * neg_below + p as u128 * n as u128;
        neg_below += n as u128;
    }
    Ok(doubled as f64 / (2 * pos as u128 * neg as u128) as f64)
}

/// (recall, precision) after each distinct threshold, descending,
/// preceded by the (0, 1) anchor.
pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>> {
    let groups = tie_groups(scores, labels);
    let pos: u64 = groups.iter().map(|g| g.1).sum();
    if pos == 0 {
        return Err(Error::NoPositives);
    }
    let mut points = vec![(0.0, 1.0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    for (_, p, n) in groups {
        tp += p;
        fp += n;
        points.push((tp as f64 / pos as f64, tp as f64 / (tp + fp) as f64));
    }
    Ok(points)
}

/// (false positive rate, true positive rate) from (0, 0) to (1, 1).
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>> {
    let groups = tie_groups(scores, labels);
    let pos: u64 = groups.iter().map(|g| g.1).sum();
    let neg: u64 = groups.iter().map(|g| g.2).sum();
    if pos == 0 || neg == 0 {
        return Err(Error::OneClassOnly);
    }
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    for (_, p, n) in groups {
        tp += p;
        fp += n;
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(points)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "config", rename_all = "snake_case")]
pub enum ModelSpec {
    Mlp(TrainConfig),
    Logistic(LogisticConfig),
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Mlp(_) => "mlp",
            ModelSpec::Logistic(_) => "logistic",
        }
    }

    /// Trains on `train` and scores `test`; `seed` drives initialization,
    /// shuffling and dropout.
    pub fn fit_predict(&self, train: &LabeledDataset, test: &FeatureMatrix, seed: u64) -> Result<Vec<f64>> {
        match self {
            ModelSpec::Mlp(cfg) => {
                let cfg = TrainConfig { seed, ..cfg.clone() };
                let mut model = AnyMlp::init(train.features.ncols(), &cfg, derive_seed(seed, 0))?;
                model.train(train)?;
                Ok(model.predict_proba(&test.values))
            }
            ModelSpec::Logistic(cfg) => {
                let model = fit_logistic(train, cfg)?;
                predict_logistic(&model, &test.values)
            }
        }
    }
}

/// How preprocessing relates to the folds.
#[derive(Debug, Clone, PartialEq)]
pub enum Preparation {
    /// Features were preprocessed once on the whole cohort.
    Prepared,
    /// Features are raw; the pipeline is refit on each training fold.
    PerFold(PreprocessConfig),
}

#[derive(Debug, Clone)]
pub struct CvData {
    pub features: FeatureMatrix,
    pub labels: Vec<bool>,
    pub preparation: Preparation,
}

impl CvData {
    pub fn prepared(dataset: LabeledDataset) -> Self {
        CvData {
            features: dataset.features,
            labels: dataset.labels,
            preparation: Preparation::Prepared,
        }
    }

    pub fn per_fold(raw: FeatureMatrix, labels: Vec<bool>, cfg: PreprocessConfig) -> Result<Self> {
        if raw.nrows() != labels.len() {
            return Err(Error::InvalidMatrix(format!(
                "{} rows but {} labels",
                raw.nrows(),
                labels.len()
            )));
        }
        Ok(CvData {
            features: raw,
            labels,
            preparation: Preparation::PerFold(cfg),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn mode(&self) -> FitScope {
        match self.preparation {
            Preparation::Prepared => FitScope::WholeDataset,
            Preparation::PerFold(_) => FitScope::LeakageSafe,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub model: ModelSpec,
    pub runs: usize,
    pub folds: usize,
    pub threshold: f64,
    pub groups: Vec<FeatureGroup>,
    pub n_samples: usize,
    pub n_features: usize,
    pub positive_fraction: f64,
    pub preprocess_mode: FitScope,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preprocess: Option<PreprocessConfig>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSeeds {
    pub run: usize,
    pub seed: u64,
    pub fold_seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub base: u64,
    pub runs: Vec<RunSeeds>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub confusion: ConfusionMatrix,
    pub metrics: MetricSet,
    pub degenerate: Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run: usize,
    pub folds: Vec<FoldReport>,
    /// Arithmetic mean of this run's fold metrics.
    pub averaged: MetricSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledMetrics {
    /// Sum of every fold's confusion matrix.
    pub confusion: ConfusionMatrix,
    pub metrics: MetricSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curves {
    /// Test scores of every fold and run scored together.
    pub pr: Vec<[f64; 2]>,
    pub roc: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flag {
    pub code: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: ReportConfig,
    pub seeds: Seeds,
    pub runs: Vec<RunReport>,
    /// Arithmetic mean over every fold of every run.
    pub averaged: MetricSet,
    pub pooled: PooledMetrics,
    pub curves: Curves,
    pub flags: Vec<Flag>,
}

/// Mean of each metric; AUC averages over the folds where it is defined.
pub fn mean_metrics<'a>(sets: impl IntoIterator<Item = &'a MetricSet>) -> MetricSet {
    let sets: Vec<&MetricSet> = sets.into_iter().collect();
    let n = sets.len() as f64;
    let mean = |f: fn(&MetricSet) -> f64| sets.iter().map(|m| f(m)).sum::<f64>() / n;
    let aucs: Vec<f64> = sets.iter().filter_map(|m| m.auc).collect();
    MetricSet {
        accuracy: mean(|m| m.accuracy),
        precision: mean(|m| m.precision),
        recall: mean(|m| m.recall),
        f_measure: mean(|m| m.f_measure),
        auc: (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64),
    }
}

struct FoldOutcome {
    report: FoldReport,
    test_rows: Vec<usize>,
    scores: Vec<f64>,
}

fn run_fold(
    data: &CvData,
    groups: &BTreeSet<FeatureGroup>,
    selected: Option<&LabeledDataset>,
    model: &ModelSpec,
    folds: &[Vec<usize>],
    fold: usize,
    seed: u64,
) -> Result<FoldOutcome> {
    let test_rows = folds[fold].clone();
    let train_rows: Vec<usize> = folds
        .iter()
        .enumerate()
        .filter(|&(f, _)| f != fold)
        .flat_map(|(_, rows)| rows.iter().copied())
        .collect();
    let refit;
    let dataset = match (&data.preparation, selected) {
        (Preparation::Prepared, Some(ds)) => ds,
        (Preparation::PerFold(cfg), _) => {
            let fitted = FittedPipeline::fit(&data.features, &train_rows, cfg)?;
            let (full, audit) = fitted.transform(&data.features)?;
            if audit.missing_after > 0 {
                return Err(Error::IncompletePipeline(audit.missing_after));
            }
            refit = LabeledDataset::new(full, data.labels.clone())?.select_columns(groups)?;
            &refit
        }
        (Preparation::Prepared, None) => unreachable!("prepared data is selected up front"),
    };
    let train = dataset.select_rows(&train_rows);
    let test = dataset.select_rows(&test_rows);
    let scores = model.fit_predict(&train, &test.features, seed)?;
    let cm = confusion(&scores, &test.labels, DEFAULT_THRESHOLD);
    let (mut m, degenerate) = metrics(&cm);
    m.auc = roc_auc(&scores, &test.labels).ok();
    log::debug!(
        "fold {fold}: n_test={} acc={:.4} f={:.4}",
        test_rows.len(),
        m.accuracy,
        m.f_measure
    );
    Ok(FoldOutcome {
        report: FoldReport {
            fold,
            train_size: train_rows.len(),
            test_size: test_rows.len(),
            confusion: cm,
            metrics: m,
            degenerate,
        },
        test_rows,
        scores,
    })
}

fn point_pairs(points: Vec<(f64, f64)>) -> Vec<[f64; 2]> {
    points.into_iter().map(|(a, b)| [a, b]).collect()
}

/// `runs` repetitions of `k`-fold cross-validation on the columns in
/// `groups`. Run `r` shuffles with `derive_seed(seed, r)`; fold `f` of
/// that run trains with `derive_seed(run_seed, f)`. Folds run in
/// parallel but the report does not depend on scheduling.
pub fn run_cv(
    data: &CvData,
    groups: &BTreeSet<FeatureGroup>,
    model: &ModelSpec,
    runs: usize,
    k: usize,
    seed: u64,
) -> Result<EvalReport> {
    if runs == 0 {
        return Err(Error::InvalidConfig("runs must be at least 1".into()));
    }
    let n = data.len();
    let selected = match data.preparation {
        Preparation::Prepared => Some(
            LabeledDataset::new(data.features.clone(), data.labels.clone())?.select_columns(groups)?,
        ),
        Preparation::PerFold(_) => None,
    };
    let n_features = match &selected {
        Some(ds) => ds.features.ncols(),
        None => data.features.select_columns(groups)?.ncols(),
    };

    let mut run_reports = Vec::with_capacity(runs);
    let mut seed_log = Vec::with_capacity(runs);
    let mut pooled_scores = Vec::with_capacity(n * runs);
    let mut pooled_labels = Vec::with_capacity(n * runs);
    let mut pooled_cm = ConfusionMatrix::default();
    for run in 0..runs {
        let run_seed = derive_seed(seed, run as u64);
        let folds = kfold_split(n, k, run_seed)?;
        let fold_seeds: Vec<u64> = (0..k).map(|f| derive_seed(run_seed, f as u64)).collect();
        let outcomes = (0..k)
            .into_par_iter()
            .map(|f| run_fold(data, groups, selected.as_ref(), model, &folds, f, fold_seeds[f]))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| {
                log::error!("{} run {run} failed: {e}", model.name());
                e
            })?;
        let mut fold_reports = Vec::with_capacity(k);
        for o in outcomes {
            pooled_cm.add(&o.report.confusion);
            for (&row, &s) in o.test_rows.iter().zip(&o.scores) {
                pooled_scores.push(s);
                pooled_labels.push(data.labels[row]);
            }
            fold_reports.push(o.report);
        }
        let averaged = mean_metrics(fold_reports.iter().map(|f| &f.metrics));
        log::info!(
            "{} run {}/{runs}: acc={:.4} f={:.4}",
            model.name(),
            run + 1,
            averaged.accuracy,
            averaged.f_measure
        );
        run_reports.push(RunReport {
            run,
            folds: fold_reports,
            averaged,
        });
        seed_log.push(RunSeeds {
            run,
            seed: run_seed,
            fold_seeds,
        });
    }

    let averaged = mean_metrics(run_reports.iter().flat_map(|r| r.folds.iter().map(|f| &f.metrics)));
    let (mut pooled_metrics, _) = metrics(&pooled_cm);
    pooled_metrics.auc = roc_auc(&pooled_scores, &pooled_labels).ok();
    let curves = Curves {
        pr: pr_curve(&pooled_scores, &pooled_labels).map(point_pairs).unwrap_or_default(),
        roc: roc_curve(&pooled_scores, &pooled_labels).map(point_pairs).unwrap_or_default(),
    };
    let flags = report_flags(data, model, &run_reports);
    let positives = data.labels.iter().filter(|&&y| y).count();
    Ok(EvalReport {
        config: ReportConfig {
            model: model.clone(),
            runs,
            folds: k,
            threshold: DEFAULT_THRESHOLD,
            groups: groups.iter().copied().collect(),
            n_samples: n,
            n_features,
            positive_fraction: if n == 0 { 0.0 } else { positives as f64 / n as f64 },
            preprocess_mode: data.mode(),
            preprocess: match &data.preparation {
                Preparation::PerFold(cfg) => Some(cfg.clone()),
                Preparation::Prepared => None,
            },
        },
        seeds: Seeds {
            base: seed,
            runs: seed_log,
        },
        runs: run_reports,
        averaged,
        pooled: PooledMetrics {
            confusion: pooled_cm,
            metrics: pooled_metrics,
        },
        curves,
        flags,
    })
}

fn flag(code: &str, detail: impl Into<String>) -> Flag {
    Flag {
        code: code.to_string(),
        detail: detail.into(),
    }
}

fn report_flags(data: &CvData, model: &ModelSpec, runs: &[RunReport]) -> Vec<Flag> {
    let mut flags = vec![
        flag(
            "averaging",
            "`averaged` is the mean of per-fold metrics; `pooled` is computed from the summed confusion matrix",
        ),
        flag("curves", "PR and ROC curves pool test-fold scores across all runs"),
        flag("threshold", "positive iff P(positive) >= 0.5"),
    ];
    match data.mode() {
        FitScope::WholeDataset => flags.push(flag(
            "preprocess_mode",
            "replicate: preprocessing statistics were fit on the whole cohort, test folds included",
        )),
        FitScope::LeakageSafe => flags.push(flag(
            "preprocess_mode",
            "leakage-safe: preprocessing refit on each training fold; held-out values clamped to [0, 1]",
        )),
    }
    match model {
        ModelSpec::Logistic(_) => flags.push(flag(
            "baseline_substitution",
            "shallow baseline is L2 logistic regression by full-batch gradient descent, not SimpleLogistic/LMT",
        )),
        ModelSpec::Mlp(_) => flags.push(flag(
            "unpinned_defaults",
            "l2_lambda, init_range, bn_epsilon, bn_momentum and block_order are fixed implementation defaults, not tuned values",
        )),
    }
    let all_folds = runs.iter().flat_map(|r| &r.folds);
    let (p, r) = all_folds.fold((0, 0), |(p, r), f| {
        (p + usize::from(f.degenerate.precision), r + usize::from(f.degenerate.recall))
    });
    if p > 0 {
        flags.push(flag("degenerate_precision", format!("{p} folds had no positive predictions")));
    }
    if r > 0 {
        flags.push(flag("degenerate_recall", format!("{r} folds had no positive labels")));
    }
    flags
}

/// The seven ablation combinations: text alone, text with each
/// structured group, and all six groups.
pub fn default_combos() -> Vec<BTreeSet<FeatureGroup>> {
    let mut combos = vec![BTreeSet::from([FeatureGroup::TextEmbedding])];
    for g in [
        FeatureGroup::LabChart,
        FeatureGroup::Treatment,
        FeatureGroup::Comorbidity,
        FeatureGroup::Demographics,
        FeatureGroup::Admission,
    ] {
        combos.push(BTreeSet::from([FeatureGroup::TextEmbedding, g]));
    }
    combos.push(FeatureGroup::ALL.iter().copied().collect());
    combos
}

/// Short label for a group set, e.g. `text+labchart` or `all`.
pub fn combo_label(groups: &BTreeSet<FeatureGroup>) -> String {
    if groups.len() == FeatureGroup::ALL.len() {
        return "all".into();
    }
    let mut names: Vec<&str> = groups.iter().map(|g| g.as_str()).collect();
    // text first reads naturally in tables
    names.sort_by_key(|n| (*n != FeatureGroup::TextEmbedding.as_str(), *n));
    names.join("+")
}

/// One report per combination, every one on the same fold partitions.
pub fn run_ablation(
    data: &CvData,
    combos: &[BTreeSet<FeatureGroup>],
    model: &ModelSpec,
    runs: usize,
    k: usize,
    seed: u64,
) -> Result<Vec<EvalReport>> {
    combos
        .iter()
        .map(|groups| {
            log::info!("ablation combo {}", combo_label(groups));
            run_cv(data, groups, model, runs, k, seed)
        })
        .collect()
}

fn write_points(path: &Path, header: [&str; 2], points: &[[f64; 2]]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    let io = |e: csv::Error| Error::io(path, e.into());
    w.write_record(header).map_err(io)?;
    for p in points {
        w.write_record([p[0].to_string(), p[1].to_string()]).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `report.json`, `pr_curve.csv`, `roc_curve.csv` and `folds.csv`.
pub fn write_report(report: &EvalReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = dir.join("report.json");
    std::fs::write(&json, serde_json::to_string_pretty(report)?).map_err(|e| Error::io(&json, e))?;
    write_points(&dir.join("pr_curve.csv"), ["recall", "precision"], &report.curves.pr)?;
    write_points(&dir.join("roc_curve.csv"), ["fpr", "tpr"], &report.curves.roc)?;

    let path = dir.join("folds.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::io(&path, e.into()))?;
    let io = |e: csv::Error| Error::io(&path, e.into());
    w.write_record([
        "run", "fold", "test_size", "tp", "fp", "fn", "tn", "accuracy", "precision", "recall", "f_measure", "auc",
    ])
    .map_err(io)?;
    for r in &report.runs {
        for f in &r.folds {
            let c = &f.confusion;
            let m = &f.metrics;
            w.write_record([
                r.run.to_string(),
                f.fold.to_string(),
                f.test_size.to_string(),
                c.tp.to_string(),
                c.fp.to_string(),
                c.fn_.to_string(),
                c.tn.to_string(),
                m.accuracy.to_string(),
                m.precision.to_string(),
                m.recall.to_string(),
                m.f_measure.to_string(),
                m.auc.map(|a| a.to_string()).unwrap_or_default(),
            ])
            .map_err(io)?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))
}
