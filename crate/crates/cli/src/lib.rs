//! Subcommands behind the `amifuse` binary.
//!
//! Every command writes its primary outputs deterministically from the
//! resolved seed and drops a `manifest.json` beside them; timestamps live
//! only in the manifest.

pub mod dataset;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use amifuse::assemble::{prepare, raw_cohort};
use amifuse::baseline::LogisticConfig;
use amifuse::config::KvConfig;
use amifuse::domain::parse_group_list;
use amifuse::embed::load_embeddings;
use amifuse::eval::{combo_label, default_combos, run_cv, write_report, CvData, EvalReport, ModelSpec};
use amifuse::ingest::{load_records, LabelPolicy};
use amifuse::mlp::TrainConfig;
use amifuse::preprocess::{FitScope, PreprocessConfig};
use amifuse::schema::Schema;
use amifuse::synth::{generate_cohort, write_fixture, SynthConfig};
use amifuse::FeatureGroup;
use anyhow::{bail, Context, Result};
use serde::Serialize;

use crate::dataset::{read_dataset, write_dataset};

pub const DEFAULT_SEED: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config_path: Option<PathBuf>,
    pub seed: u64,
    pub inputs: BTreeMap<String, PathBuf>,
    pub outputs: Vec<String>,
    pub tool_version: String,
    pub started: String,
    pub finished: String,
}

impl RunManifest {
    fn start(subcommand: &str, config_path: Option<&Path>, seed: u64) -> Self {
        RunManifest {
            subcommand: subcommand.to_string(),
            config_path: config_path.map(Path::to_path_buf),
            seed,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started: now(),
            finished: String::new(),
        }
    }

    fn finish(mut self, dir: &Path) -> Result<()> {
        self.finished = now();
        let mut outputs = Vec::new();
        collect_files(dir, dir, &mut outputs)?;
        outputs.retain(|p| p != "manifest.json");
        self.outputs = outputs;
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&self)?)
            .with_context(|| format!("writing {}", path.display()))
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.path());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            collect_files(root, &p, out)?;
        } else {
            out.push(p.strip_prefix(root).unwrap_or(&p).to_string_lossy().into_owned());
        }
    }
    Ok(())
}

fn load_config(path: Option<&Path>) -> Result<KvConfig> {
    match path {
        Some(p) => Ok(KvConfig::load(p)?),
        None => Ok(KvConfig::new()),
    }
}

/// Flag value, else the `seed` config key, else [`DEFAULT_SEED`].
fn resolve_seed(flag: Option<u64>, kv: &KvConfig) -> Result<u64> {
    Ok(match flag {
        Some(s) => s,
        None => kv.get("seed")?.unwrap_or(DEFAULT_SEED),
    })
}

#[derive(Debug, Clone, Default)]
pub struct SynthArgs {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub n: Option<usize>,
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let kv = load_config(args.config.as_deref())?;
    let mut cfg = SynthConfig::default();
    cfg.apply_kv(&kv)?;
    cfg.seed = match args.seed {
        Some(s) => s,
        None => kv.get("synth.seed")?.or(kv.get("seed")?).unwrap_or(cfg.seed),
    };
    if let Some(n) = args.n {
        cfg.n_admissions = n;
    }
    let manifest = RunManifest::start("synth", args.config.as_deref(), cfg.seed);
    let cohort = generate_cohort(&cfg)?;
    write_fixture(&cohort, &args.out)?;
    log::info!(
        "wrote {} rows for {} admissions to {}",
        cohort.rows.len(),
        cohort.truth.admissions.len(),
        args.out.display()
    );
    manifest.finish(&args.out)
}

#[derive(Debug, Clone, Default)]
pub struct PrepareArgs {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: PathBuf,
    /// Directory written by `synth`; supplies any path not given explicitly.
    pub fixture: Option<PathBuf>,
    pub cohort: Option<PathBuf>,
    pub summaries: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub schema: Option<PathBuf>,
}

fn input_path(explicit: &Option<PathBuf>, fixture: &Option<PathBuf>, name: &str) -> Option<PathBuf> {
    explicit.clone().or_else(|| fixture.as_ref().map(|d| d.join(name)))
}

pub fn cmd_prepare(args: &PrepareArgs) -> Result<()> {
    let kv = load_config(args.config.as_deref())?;
    let seed = resolve_seed(args.seed, &kv)?;
    let mut manifest = RunManifest::start("prepare", args.config.as_deref(), seed);

    let Some(cohort_path) = input_path(&args.cohort, &args.fixture, "cohort.csv") else {
        bail!("no cohort file: pass --cohort or --fixture");
    };
    let summaries = input_path(&args.summaries, &args.fixture, "summaries.tsv");
    let embeddings = input_path(&args.embeddings, &args.fixture, "embeddings.txt");
    let schema_path = args
        .schema
        .clone()
        .or_else(|| args.fixture.as_ref().map(|d| d.join("schema.csv")).filter(|p| p.exists()));
    let schema = match &schema_path {
        Some(p) => Schema::load(p)?,
        None => Schema::default_79(),
    };

    let mut policy = LabelPolicy::default();
    kv.read_into("label.horizon_days", &mut policy.horizon_days)?;
    kv.read_into("label.inclusive", &mut policy.inclusive)?;
    let loaded = load_records(&cohort_path, summaries.as_deref(), &schema, policy)?;
    let table = match &embeddings {
        Some(p) => {
            let l = load_embeddings(p)?;
            if l.duplicate_tokens > 0 {
                log::warn!("{}: {} duplicate tokens ignored", p.display(), l.duplicate_tokens);
            }
            Some(l.table)
        }
        None => None,
    };
    let mut pcfg = PreprocessConfig::from_schema(&schema);
    pcfg.apply_kv(&kv)?;
    let raw = raw_cohort(&loaded.records, &schema, table.as_ref())?;
    let (dataset, audit) = prepare(&raw, &pcfg)?;

    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_dataset(&args.out, &raw, &dataset, &pcfg)?;
    let audit_json = serde_json::json!({ "ingest": loaded.stats, "preprocess": audit });
    let path = args.out.join("audit.json");
    std::fs::write(&path, serde_json::to_string_pretty(&audit_json)?)?;

    manifest.inputs.insert("cohort".into(), cohort_path);
    for (k, v) in [("summaries", summaries), ("embeddings", embeddings), ("schema", schema_path)] {
        if let Some(v) = v {
            manifest.inputs.insert(k.into(), v);
        }
    }
    log::info!("prepared {} rows x {} columns", dataset.len(), dataset.features.ncols());
    manifest.finish(&args.out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Mlp,
    Logistic,
}

impl std::str::FromStr for ModelKind {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(ModelKind::Mlp),
            "logistic" => Ok(ModelKind::Logistic),
            other => bail!("unknown model {other:?} (expected mlp or logistic)"),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct EvaluateArgs {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: PathBuf,
    /// Directory written by `prepare`.
    pub data: PathBuf,
    pub model: Option<ModelKind>,
    pub runs: Option<usize>,
    pub folds: Option<usize>,
    pub mode: Option<FitScope>,
    pub groups: Option<String>,
}

/// Everything `evaluate` and `ablate` resolve from flags and config.
struct Resolved {
    seed: u64,
    spec: ModelSpec,
    runs: usize,
    folds: usize,
    data: CvData,
    groups: BTreeSet<FeatureGroup>,
}

fn resolve(args: &EvaluateArgs, kv: &KvConfig) -> Result<Resolved> {
    let seed = resolve_seed(args.seed, kv)?;
    let model = match args.model {
        Some(m) => m,
        None => kv.get_str("eval.model").unwrap_or("mlp").parse()?,
    };
    let spec = match model {
        ModelKind::Mlp => {
            let mut c = TrainConfig::default();
            c.apply_kv(kv)?;
            ModelSpec::Mlp(c)
        }
        ModelKind::Logistic => {
            let mut c = LogisticConfig::default();
            c.apply_kv(kv)?;
            ModelSpec::Logistic(c)
        }
    };
    let runs = match args.runs {
        Some(r) => r,
        None => kv.get("eval.runs")?.unwrap_or(10),
    };
    let folds = match args.folds {
        Some(k) => k,
        None => kv.get("eval.folds")?.unwrap_or(10),
    };
    let mode = match args.mode {
        Some(m) => m,
        None => kv.get("eval.mode")?.unwrap_or(FitScope::WholeDataset),
    };
    let groups = match args.groups.as_deref().or(kv.get_str("eval.groups")) {
        Some(list) => parse_group_list(list)?,
        None => FeatureGroup::ALL.into_iter().collect(),
    };
    let stored = read_dataset(&args.data)?;
    let data = match mode {
        FitScope::WholeDataset => CvData::prepared(stored.prepared),
        FitScope::LeakageSafe => {
            let mut cfg = stored.meta.preprocess.clone();
            cfg.fit_scope = FitScope::LeakageSafe;
            CvData::per_fold(stored.raw, stored.labels, cfg)?
        }
    };
    Ok(Resolved {
        seed,
        spec,
        runs,
        folds,
        data,
        groups,
    })
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<EvalReport> {
    let kv = load_config(args.config.as_deref())?;
    let r = resolve(args, &kv)?;
    let mut manifest = RunManifest::start("evaluate", args.config.as_deref(), r.seed);
    manifest.inputs.insert("data".into(), args.data.clone());
    let report = run_cv(&r.data, &r.groups, &r.spec, r.runs, r.folds, r.seed)?;
    write_report(&report, &args.out)?;
    log::info!(
        "{}: accuracy {:.4}, F {:.4}",
        r.spec.name(),
        report.averaged.accuracy,
        report.averaged.f_measure
    );
    manifest.finish(&args.out)?;
    Ok(report)
}

pub const SUMMARY_HEADER: [&str; 8] = [
    "combo",
    "groups",
    "dimension",
    "accuracy",
    "precision",
    "recall",
    "f_measure",
    "auc",
];

/// Runs every default combination; `args.groups` is ignored.
pub fn cmd_ablate(args: &EvaluateArgs) -> Result<Vec<EvalReport>> {
    let kv = load_config(args.config.as_deref())?;
    let r = resolve(args, &kv)?;
    let mut manifest = RunManifest::start("ablate", args.config.as_deref(), r.seed);
    manifest.inputs.insert("data".into(), args.data.clone());
    let available: BTreeSet<FeatureGroup> = r.data.features.column_groups.iter().copied().collect();
    let combos = default_combos();
    if let Some(missing) = combos.iter().flatten().find(|g| !available.contains(g)) {
        bail!("dataset has no {missing} columns; ablation needs all six groups");
    }
    std::fs::create_dir_all(&args.out)?;
    let path = args.out.join("summary.csv");
    let mut summary = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
    summary.write_record(SUMMARY_HEADER)?;
    let mut reports = Vec::with_capacity(combos.len());
    for combo in &combos {
        let label = combo_label(combo);
        log::info!("combo {label}");
        let report = run_cv(&r.data, combo, &r.spec, r.runs, r.folds, r.seed)?;
        write_report(&report, &args.out.join(format!("combo_{label}")))?;
        let m = &report.averaged;
        let groups: Vec<&str> = combo.iter().map(|g| g.as_str()).collect();
        summary.write_record([
            label,
            groups.join(";"),
            report.config.n_features.to_string(),
            format!("{:.4}", m.accuracy),
            format!("{:.4}", m.precision),
            format!("{:.4}", m.recall),
            format!("{:.4}", m.f_measure),
            m.auc.map(|a| format!("{a:.4}")).unwrap_or_default(),
        ])?;
        reports.push(report);
    }
    summary.flush()?;
    manifest.finish(&args.out)?;
    Ok(reports)
}
