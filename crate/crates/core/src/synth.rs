//! Synthetic cohorts in the ingest file formats.
//!
//! Labels are drawn first; every feature is then drawn conditionally on
//! the label so that each group's class separation grows with its signal
//! strength. Discharge summaries are token streams whose emission
//! weights tilt the averaged embedding along two planted directions:
//! one carries the label directly, the other carries a latent whose sign
//! relative to the label flips for admissions with a phenotype that is
//! visible only through the structured columns. A linear model sees the
//! flip as noise.
//!
//! Each purpose draws from its own seeded stream and the number of draws
//! never depends on a signal strength, so two configurations that differ
//! only in strengths share every noise draw.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use chrono::{Duration, NaiveDate};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::KvConfig;
use crate::domain::{parse_group_list, FeatureGroup};
use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::ingest::{cohort_header, RawAdmissionRow, DATE_FORMAT};
use crate::rng::{derive_seed, seeded};
use crate::schema::{FeatureKind, Schema};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_admissions: usize,
    pub positive_rate: f64,
    /// Fraction of admissions split across two rows.
    pub duplicate_rate: f64,
    /// Chance that an age above 89 is written with +211.
    pub masked_age_rate: f64,
    /// Chance that a lab cell is replaced by the 0 placeholder.
    pub zero_lab_rate: f64,
    /// Chance that a range-checked scalar is replaced by an impossible value.
    pub invalid_rate: f64,
    /// Chance that any feature cell is left blank.
    pub missing_rate: f64,
    /// Extra admissions with codes outside the cohort, per cohort admission.
    pub off_cohort_rate: f64,
    pub missing_summary_rate: f64,
    /// Fraction of summary tokens absent from the embedding vocabulary.
    pub oov_rate: f64,
    pub group_signal_strengths: BTreeMap<FeatureGroup, f64>,
    /// Separation of the latent carried along the second text direction.
    pub interaction_strength: f64,
    /// Prevalence of the phenotype that flips the interaction latent.
    pub interaction_fraction: f64,
    /// Structured groups whose columns reveal the phenotype.
    pub phenotype_groups: BTreeSet<FeatureGroup>,
    /// Shift of those columns for phenotype carriers: logit units for
    /// indicators, spreads for scalars, quarter log-rate for counts.
    pub phenotype_strength: f64,
    pub vocab_size: usize,
    pub embedding_dim: usize,
    /// Inclusive range of tokens per summary.
    pub summary_tokens: (usize, usize),
    /// Scale of the emission tilt toward the planted text directions.
    pub text_tilt: f64,
    /// Range of indicator base logits before any shift.
    pub indicator_base_logit: (f64, f64),
    /// Ages are clamped to this range before masking.
    pub age_bounds: (f64, f64),
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let group_signal_strengths = BTreeMap::from([
            (FeatureGroup::Admission, 0.45),
            (FeatureGroup::Demographics, 0.45),
            (FeatureGroup::Treatment, 0.3),
            (FeatureGroup::Comorbidity, 0.25),
            (FeatureGroup::LabChart, 0.15),
            (FeatureGroup::TextEmbedding, 1.0),
        ]);
        SynthConfig {
            n_admissions: 5436,
            positive_rate: 0.30,
            duplicate_rate: 0.05,
            masked_age_rate: 1.0,
            zero_lab_rate: 0.02,
            invalid_rate: 0.005,
            missing_rate: 0.01,
            off_cohort_rate: 0.05,
            missing_summary_rate: 0.01,
            oov_rate: 0.05,
            group_signal_strengths,
            interaction_strength: 3.0,
            interaction_fraction: 0.3,
            phenotype_groups: FeatureGroup::STRUCTURED.into_iter().collect(),
            phenotype_strength: 2.5,
            vocab_size: 2000,
            embedding_dim: 200,
            summary_tokens: (150, 300),
            text_tilt: 0.6,
            indicator_base_logit: (-4.0, -2.5),
            age_bounds: (40.0, 100.0),
            seed: 0,
        }
    }
}

fn parse_pair(key: &str, value: &str) -> Result<(f64, f64)> {
    value
        .split_once(',')
        .and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)))
        .ok_or_else(|| Error::InvalidConfig(format!("{key} = {value:?}: expected `a,b`")))
}

impl SynthConfig {
    pub fn strength(&self, group: FeatureGroup) -> f64 {
        self.group_signal_strengths.get(&group).copied().unwrap_or(0.0)
    }

    /// Every group strength and the interaction set to zero.
    pub fn without_signal(mut self) -> Self {
        for s in self.group_signal_strengths.values_mut() {
            *s = 0.0;
        }
        self.interaction_strength = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.positive_rate > 0.0 && self.positive_rate < 1.0) {
            return bad(format!("positive_rate must be in (0, 1), got {}", self.positive_rate));
        }
        let rates = [
            ("duplicate_rate", self.duplicate_rate),
            ("zero_lab_rate", self.zero_lab_rate),
            ("invalid_rate", self.invalid_rate),
            ("missing_rate", self.missing_rate),
            ("off_cohort_rate", self.off_cohort_rate),
            ("missing_summary_rate", self.missing_summary_rate),
            ("oov_rate", self.oov_rate),
        ];
        for (name, r) in rates {
            if !(0.0..1.0).contains(&r) {
                return bad(format!("{name} must be in [0, 1), got {r}"));
            }
        }
        if !(0.0..=1.0).contains(&self.masked_age_rate) || !(0.0..=1.0).contains(&self.interaction_fraction) {
            return bad("masked_age_rate and interaction_fraction must be in [0, 1]".into());
        }
        if self.group_signal_strengths.values().any(|&s| !(s >= 0.0)) || !(self.interaction_strength >= 0.0) {
            return bad("signal strengths must be non-negative".into());
        }
        if self.phenotype_groups.contains(&FeatureGroup::TextEmbedding) {
            return bad("phenotype_groups must be structured groups".into());
        }
        if self.vocab_size < 2 || self.embedding_dim < 2 {
            return bad("vocab_size and embedding_dim must be at least 2".into());
        }
        let (lo, hi) = self.summary_tokens;
        if lo == 0 || lo > hi {
            return bad("summary_tokens must be a non-empty range of positive lengths".into());
        }
        let (lo, hi) = self.indicator_base_logit;
        if !(lo <= hi) {
            return bad("indicator_base_logit must be an ordered pair".into());
        }
        let (a, b) = self.age_bounds;
        if !(a >= 15.0 && a <= b && b <= 120.0) {
            return bad("age_bounds must lie within [15, 120]".into());
        }
        Ok(())
    }

    /// Applies `synth.*` keys (`synth.signal.<group>` for strengths).
    pub fn apply_kv(&mut self, kv: &KvConfig) -> Result<()> {
        kv.read_into("synth.n_admissions", &mut self.n_admissions)?;
        kv.read_into("synth.positive_rate", &mut self.positive_rate)?;
        kv.read_into("synth.duplicate_rate", &mut self.duplicate_rate)?;
        kv.read_into("synth.masked_age_rate", &mut self.masked_age_rate)?;
        kv.read_into("synth.zero_lab_rate", &mut self.zero_lab_rate)?;
        kv.read_into("synth.invalid_rate", &mut self.invalid_rate)?;
        kv.read_into("synth.missing_rate", &mut self.missing_rate)?;
        kv.read_into("synth.off_cohort_rate", &mut self.off_cohort_rate)?;
        kv.read_into("synth.missing_summary_rate", &mut self.missing_summary_rate)?;
        kv.read_into("synth.oov_rate", &mut self.oov_rate)?;
        kv.read_into("synth.interaction_strength", &mut self.interaction_strength)?;
        kv.read_into("synth.interaction_fraction", &mut self.interaction_fraction)?;
        if let Some(v) = kv.get_str("synth.phenotype_groups") {
            self.phenotype_groups = if v.trim() == "none" {
                BTreeSet::new()
            } else {
                parse_group_list(v)?
            };
        }
        kv.read_into("synth.phenotype_strength", &mut self.phenotype_strength)?;
        kv.read_into("synth.vocab_size", &mut self.vocab_size)?;
        kv.read_into("synth.embedding_dim", &mut self.embedding_dim)?;
        kv.read_into("synth.text_tilt", &mut self.text_tilt)?;
        kv.read_into("synth.seed", &mut self.seed)?;
        if let Some(v) = kv.get_str("synth.summary_tokens") {
            let (a, b) = parse_pair("synth.summary_tokens", v)?;
            self.summary_tokens = (a as usize, b as usize);
        }
        if let Some(v) = kv.get_str("synth.indicator_base_logit") {
            self.indicator_base_logit = parse_pair("synth.indicator_base_logit", v)?;
        }
        if let Some(v) = kv.get_str("synth.age_bounds") {
            self.age_bounds = parse_pair("synth.age_bounds", v)?;
        }
        for (name, value) in kv.with_prefix("synth.signal.") {
            let group: FeatureGroup = name.parse()?;
            let s: f64 = value
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("synth.signal.{name} = {value:?}")))?;
            self.group_signal_strengths.insert(group, s);
        }
        self.validate()
    }

    /// The configuration as `synth.*` keys; [`apply_kv`](Self::apply_kv)
    /// on the result reproduces `self`.
    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::new();
        kv.set("synth.n_admissions", self.n_admissions);
        kv.set("synth.positive_rate", self.positive_rate);
        kv.set("synth.duplicate_rate", self.duplicate_rate);
        kv.set("synth.masked_age_rate", self.masked_age_rate);
        kv.set("synth.zero_lab_rate", self.zero_lab_rate);
        kv.set("synth.invalid_rate", self.invalid_rate);
        kv.set("synth.missing_rate", self.missing_rate);
        kv.set("synth.off_cohort_rate", self.off_cohort_rate);
        kv.set("synth.missing_summary_rate", self.missing_summary_rate);
        kv.set("synth.oov_rate", self.oov_rate);
        kv.set("synth.interaction_strength", self.interaction_strength);
        kv.set("synth.interaction_fraction", self.interaction_fraction);
        let groups: Vec<&str> = self.phenotype_groups.iter().map(|g| g.as_str()).collect();
        kv.set(
            "synth.phenotype_groups",
            if groups.is_empty() { "none".to_string() } else { groups.join(",") },
        );
        kv.set("synth.phenotype_strength", self.phenotype_strength);
        kv.set("synth.vocab_size", self.vocab_size);
        kv.set("synth.embedding_dim", self.embedding_dim);
        kv.set("synth.text_tilt", self.text_tilt);
        kv.set("synth.seed", self.seed);
        kv.set(
            "synth.summary_tokens",
            format!("{},{}", self.summary_tokens.0, self.summary_tokens.1),
        );
        kv.set("synth.age_bounds", format!("{},{}", self.age_bounds.0, self.age_bounds.1));
        kv.set(
            "synth.indicator_base_logit",
            format!("{},{}", self.indicator_base_logit.0, self.indicator_base_logit.1),
        );
        for (g, s) in &self.group_signal_strengths {
            kv.set(format!("synth.signal.{}", g.as_str()), s);
        }
        kv
    }
}

/// Per-admission latent values behind a cohort admission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub admission_id: String,
    pub label: bool,
    pub phenotype: bool,
    /// Latent along the label text direction.
    pub text_latent: f64,
    /// Latent along the interaction text direction.
    pub interaction_latent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Cohort admissions in first-appearance order.
    pub admissions: Vec<TruthRow>,
    /// Signed per-feature direction of the class shift.
    pub feature_directions: BTreeMap<String, f64>,
    /// Phenotype loading of each column in the phenotype groups.
    pub phenotype_loadings: BTreeMap<String, f64>,
    pub label_direction: Vec<f64>,
    pub interaction_direction: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCohort {
    pub config: SynthConfig,
    pub schema: Schema,
    /// Cohort file rows in order, duplicates and off-cohort rows included.
    pub rows: Vec<RawAdmissionRow>,
    /// (admission_id, text) in file order.
    pub summaries: Vec<(String, String)>,
    pub embeddings: EmbeddingTable,
    pub truth: GroundTruth,
}

const COHORT_CODES: [&str; 12] = [
    "410.01", "410.11", "410.21", "410.31", "410.41", "410.51", "410.61", "410.71", "410.81", "410.91", "410", "411.0",
];
const OFF_COHORT_CODES: [&str; 8] = ["411.1", "411.81", "412", "413.9", "414.01", "428.0", "427.31", "409.9"];
const CONSONANTS: &[u8] = b"bcdfghjklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

/// Distinct pronounceable token for each index; vocabulary words end in a vowel.
fn vocab_word(mut k: usize) -> String {
    let base = CONSONANTS.len() * VOWELS.len();
    let mut out = String::new();
    for _ in 0..2 {
        let s = k % base;
        out.push(CONSONANTS[s / VOWELS.len()] as char);
        out.push(VOWELS[s % VOWELS.len()] as char);
        k /= base;
    }
    while k > 0 {
        let s = k % base;
        out.push(CONSONANTS[s / VOWELS.len()] as char);
        out.push(VOWELS[s % VOWELS.len()] as char);
        k /= base;
    }
    out
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn round_to(v: f64, decimals: i32) -> f64 {
    let f = 10f64.powi(decimals);
    (v * f).round() / f
}

/// Inverse Poisson CDF at `u`.
fn poisson_quantile(lambda: f64, u: f64) -> f64 {
    let mut k = 0u32;
    let mut p = (-lambda).exp();
    let mut cdf = p;
    while u > cdf && k < 1000 {
        k += 1;
        p *= lambda / k as f64;
        cdf += p;
    }
    k as f64
}

fn unit_vector(rng: &mut ChaCha8Rng, d: usize, orthogonal_to: Option<&[f64]>) -> Vec<f64> {
    let mut v: Vec<f64> = (0..d).map(|_| normal(rng)).collect();
    if let Some(o) = orthogonal_to {
        let dot: f64 = v.iter().zip(o).map(|(a, b)| a * b).sum();
        for (a, b) in v.iter_mut().zip(o) {
            *a -= dot * b;
        }
    }
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    v.iter_mut().for_each(|a| *a /= norm);
    v
}

/// How one schema column is drawn.
#[derive(Debug, Clone)]
struct ColumnPlan {
    kind: FeatureKind,
    group: FeatureGroup,
    direction: f64,
    /// Scalars: center and spread. Indicators: base logit. Counts: log rate.
    center: f64,
    spread: f64,
    phenotype_loading: f64,
    valid: Option<(f64, f64)>,
    zero_is_missing: bool,
}

fn plan_columns(schema: &Schema, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<ColumnPlan> {
    schema
        .features
        .iter()
        .map(|f| {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let direction = sign * rng.gen_range(0.5..1.0);
            let (center, spread) = match (f.kind, f.valid) {
                (FeatureKind::Age, _) => (68.0, 12.0),
                (FeatureKind::Scalar, Some((lo, hi))) => {
                    let span = hi - lo;
                    (lo + span * rng.gen_range(0.25..0.35), span * 0.05)
                }
                (FeatureKind::Scalar, None) => (10.0, 2.0),
                (FeatureKind::Indicator, _) => {
                    let (lo, hi) = cfg.indicator_base_logit;
                    (lo + (hi - lo) * rng.gen::<f64>(), 0.0)
                }
                (FeatureKind::Count, _) => (rng.gen_range(0.5..1.2), 0.0),
            };
            let loading = rng.gen_range(0.5..1.0);
            let phenotype_loading = if cfg.phenotype_groups.contains(&f.group) {
                loading
            } else {
                0.0
            };
            ColumnPlan {
                kind: f.kind,
                group: f.group,
                direction,
                center,
                spread,
                phenotype_loading,
                valid: f.valid,
                zero_is_missing: f.zero_is_missing,
            }
        })
        .collect()
}

/// Clean (pre-corruption) value of one column for one admission.
fn draw_value(plan: &ColumnPlan, cfg: &SynthConfig, y: bool, phenotype: bool, rng: &mut ChaCha8Rng) -> f64 {
    let s = cfg.strength(plan.group) * plan.direction * f64::from(u8::from(y));
    let ph = cfg.phenotype_strength * plan.phenotype_loading * f64::from(u8::from(phenotype));
    match plan.kind {
        FeatureKind::Scalar => {
            let z = normal(rng);
            let mut v = plan.center + plan.spread * (z + s + ph);
            if let Some((lo, hi)) = plan.valid {
                let margin = (hi - lo) * 1e-3;
                v = v.clamp(lo + margin, hi - margin);
            }
            round_to(v, 3)
        }
        FeatureKind::Age => {
            let z = normal(rng);
            let (lo, hi) = cfg.age_bounds;
            (plan.center + plan.spread * (z + s + ph)).round().clamp(lo, hi)
        }
        FeatureKind::Indicator => {
            let u: f64 = rng.gen();
            let logit = plan.center + 2.0 * s + ph;
            if u < sigmoid(logit) {
                1.0
            } else {
                0.0
            }
        }
        FeatureKind::Count => {
            let u: f64 = rng.gen();
            poisson_quantile((plan.center + 0.5 * s + 0.25 * ph).exp(), u)
        }
    }
}

fn impossible_value(lo: f64, hi: f64, u: f64, v: f64) -> f64 {
    let span = hi - lo;
    let off = span * (0.1 + v);
    if u < 0.5 {
        round_to(hi + off, 3)
    } else {
        round_to(lo - off, 3)
    }
}

struct TextModel {
    /// Standardized projection of each token on the label direction.
    label_score: Vec<f64>,
    interaction_score: Vec<f64>,
}

fn build_vocabulary(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<(EmbeddingTable, Vec<f64>, Vec<f64>, TextModel)> {
    const SCALE: f64 = 0.25;
    let d = cfg.embedding_dim;
    let label_dir = unit_vector(rng, d, None);
    let inter_dir = unit_vector(rng, d, Some(&label_dir));
    let mut table = EmbeddingTable::new(d)?;
    let mut label_score = Vec::with_capacity(cfg.vocab_size);
    let mut interaction_score = Vec::with_capacity(cfg.vocab_size);
    for k in 0..cfg.vocab_size {
        let v: Vec<f64> = (0..d).map(|_| round_to(SCALE * normal(rng), 4)).collect();
        let proj = |dir: &[f64]| v.iter().zip(dir).map(|(a, b)| a * b).sum::<f64>() / SCALE;
        label_score.push(proj(&label_dir));
        interaction_score.push(proj(&inter_dir));
        table.insert(&vocab_word(k), &v)?;
    }
    Ok((
        table,
        label_dir,
        inter_dir,
        TextModel {
            label_score,
            interaction_score,
        },
    ))
}

/// One summary: `len` tokens drawn by inverse CDF from tilted weights.
fn write_summary(
    text_model: &TextModel,
    table: &EmbeddingTable,
    cfg: &SynthConfig,
    label_latent: f64,
    interaction_latent: f64,
    rng: &mut ChaCha8Rng,
) -> String {
    let (lo, hi) = cfg.summary_tokens;
    let len = rng.gen_range(lo..=hi);
    let kappa = cfg.text_tilt;
    let mut cdf = Vec::with_capacity(table.vocab_size());
    let mut total = 0.0;
    for (c, a) in text_model.label_score.iter().zip(&text_model.interaction_score) {
        total += (kappa * (label_latent * c + interaction_latent * a)).exp();
        cdf.push(total);
    }
    let mut out = String::with_capacity(len * 6);
    for i in 0..len {
        let u_token: f64 = rng.gen();
        let u_oov: f64 = rng.gen();
        let k = cdf.partition_point(|&c| c < u_token * total).min(cdf.len() - 1);
        let mut word = table.tokens()[k].clone();
        if u_oov < cfg.oov_rate {
            // consonant ending keeps it out of the vocabulary
            word.push('q');
        }
        if i % 12 == 0 {
            if i > 0 {
                out.push_str(". ");
            }
            let mut chars = word.chars();
            if let Some(first) = chars.next() {
                out.extend(first.to_uppercase());
                out.push_str(chars.as_str());
            }
        } else {
            out.push(' ');
            out.push_str(&word);
        }
    }
    out.push('.');
    out
}

struct Admission {
    row: RawAdmissionRow,
    summary: Option<String>,
}

pub fn generate_cohort(cfg: &SynthConfig) -> Result<SynthCohort> {
    cfg.validate()?;
    let schema = Schema::default_79();
    let mut plan_rng = seeded(derive_seed(cfg.seed, 5));
    let plans = plan_columns(&schema, cfg, &mut plan_rng);
    let (embeddings, label_dir, inter_dir, text_model) = build_vocabulary(cfg, &mut plan_rng)?;

    let mut label_rng = seeded(derive_seed(cfg.seed, 1));
    let mut value_rng = seeded(derive_seed(cfg.seed, 2));
    let mut text_rng = seeded(derive_seed(cfg.seed, 3));
    let mut corrupt_rng = seeded(derive_seed(cfg.seed, 4));
    let mut off_rng = seeded(derive_seed(cfg.seed, 6));

    let epoch = NaiveDate::from_ymd_opt(2101, 1, 1).expect("valid date");
    let mut next_id = 100_001u64;
    let mut subject = 10_000u64;
    let mut emitted: Vec<Admission> = Vec::new();
    let mut truth_rows = Vec::with_capacity(cfg.n_admissions);

    for _ in 0..cfg.n_admissions {
        let y = label_rng.gen_bool(cfg.positive_rate);
        let phenotype = label_rng.gen::<f64>() < cfg.interaction_fraction;
        let e1 = normal(&mut label_rng);
        let e2 = normal(&mut label_rng);
        let admit = epoch + Duration::days(label_rng.gen_range(0..3650));
        let death_draw = label_rng.gen_range(0..=365i64);
        let late_draw = label_rng.gen_range(366..3000i64);
        let dies_later = label_rng.gen_bool(0.5);
        let new_subject = label_rng.gen::<f64>() >= 0.1;
        let code = COHORT_CODES[label_rng.gen_range(0..COHORT_CODES.len())];
        let dup_code = COHORT_CODES[label_rng.gen_range(0..COHORT_CODES.len())];

        let death = if y {
            Some(admit + Duration::days(death_draw))
        } else if dies_later {
            Some(admit + Duration::days(late_draw))
        } else {
            None
        };
        let sign = if y { 1.0 } else { -1.0 };
        let flip = if phenotype { -1.0 } else { 1.0 };
        let label_latent = cfg.strength(FeatureGroup::TextEmbedding) * f64::from(u8::from(y)) + e1;
        let interaction_latent = cfg.interaction_strength * sign * flip + e2;

        let clean: Vec<f64> = plans
            .iter()
            .map(|p| draw_value(p, cfg, y, phenotype, &mut value_rng))
            .collect();
        let summary = write_summary(&text_model, &embeddings, cfg, label_latent, interaction_latent, &mut text_rng);
        let has_summary = text_rng.gen::<f64>() >= cfg.missing_summary_rate;

        let features = corrupt(&plans, cfg, &clean, &mut corrupt_rng);
        if new_subject {
            subject += 1;
        }
        let id = next_id.to_string();
        next_id += 1;
        truth_rows.push(TruthRow {
            admission_id: id.clone(),
            label: y,
            phenotype,
            text_latent: label_latent,
            interaction_latent,
        });
        let row = RawAdmissionRow {
            admission_id: id.clone(),
            subject_id: subject.to_string(),
            icd9_code: code.to_string(),
            admit_date: admit,
            death_date: death,
            note_id: has_summary.then(|| format!("N{id}")),
            features,
            line: 0,
        };

        let dup = corrupt_rng.gen::<f64>() < cfg.duplicate_rate;
        let split_draws: Vec<f64> = (0..plans.len()).map(|_| corrupt_rng.gen()).collect();
        if dup {
            let (first, second) = split_row(&plans, &row, &split_draws, dup_code);
            emitted.push(Admission {
                row: first,
                summary: has_summary.then(|| summary.clone()),
            });
            emitted.push(Admission {
                row: second,
                summary: None,
            });
        } else {
            emitted.push(Admission {
                row,
                summary: has_summary.then_some(summary),
            });
        }

        if off_rng.gen::<f64>() < cfg.off_cohort_rate {
            let off_y = off_rng.gen_bool(cfg.positive_rate);
            let off_code = OFF_COHORT_CODES[off_rng.gen_range(0..OFF_COHORT_CODES.len())];
            let off_admit = epoch + Duration::days(off_rng.gen_range(0..3650));
            let off_features = plans
                .iter()
                .map(|p| Some(draw_value(p, cfg, off_y, false, &mut off_rng)))
                .collect();
            subject += 1;
            let id = next_id.to_string();
            next_id += 1;
            emitted.push(Admission {
                row: RawAdmissionRow {
                    admission_id: id.clone(),
                    subject_id: subject.to_string(),
                    icd9_code: off_code.to_string(),
                    admit_date: off_admit,
                    death_date: off_y.then(|| off_admit + Duration::days(off_rng.gen_range(0..=365))),
                    note_id: Some(format!("N{id}")),
                    features: off_features,
                    line: 0,
                },
                summary: Some(write_summary(&text_model, &embeddings, cfg, 0.0, 0.0, &mut off_rng)),
            });
        }
    }

    let mut rows = Vec::with_capacity(emitted.len());
    let mut summaries = Vec::new();
    for (i, a) in emitted.into_iter().enumerate() {
        let mut row = a.row;
        row.line = i as u64 + 2;
        if let Some(text) = a.summary {
            summaries.push((row.admission_id.clone(), text));
        }
        rows.push(row);
    }
    let feature_directions = schema
        .features
        .iter()
        .zip(&plans)
        .map(|(f, p)| (f.name.clone(), p.direction))
        .collect();
    let phenotype_loadings = schema
        .features
        .iter()
        .zip(&plans)
        .filter(|(_, p)| p.phenotype_loading > 0.0)
        .map(|(f, p)| (f.name.clone(), p.phenotype_loading))
        .collect();
    Ok(SynthCohort {
        config: cfg.clone(),
        schema,
        rows,
        summaries,
        embeddings,
        truth: GroundTruth {
            admissions: truth_rows,
            feature_directions,
            phenotype_loadings,
            label_direction: label_dir,
            interaction_direction: inter_dir,
        },
    })
}

/// Masking, placeholder zeros, impossible values and blanks. Draws four
/// uniforms per cell whatever the rates.
fn corrupt(plans: &[ColumnPlan], cfg: &SynthConfig, clean: &[f64], rng: &mut ChaCha8Rng) -> Vec<Option<f64>> {
    plans
        .iter()
        .zip(clean)
        .map(|(p, &v)| {
            let (u_a, u_b, u_c, u_d): (f64, f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen(), rng.gen());
            let mut v = v;
            if p.kind == FeatureKind::Age && v > 89.0 && u_a < cfg.masked_age_rate {
                v += 211.0;
            }
            if p.zero_is_missing && u_b < cfg.zero_lab_rate {
                v = 0.0;
            } else if p.kind == FeatureKind::Scalar && u_b >= 1.0 - cfg.invalid_rate {
                if let Some((lo, hi)) = p.valid {
                    v = impossible_value(lo, hi, u_c, u_a);
                }
            }
            (u_d >= cfg.missing_rate).then_some(v)
        })
        .collect()
}

/// Two rows whose merge restores `row`: each indicator set in one row,
/// counts split, scalars present in at least one.
fn split_row(plans: &[ColumnPlan], row: &RawAdmissionRow, draws: &[f64], code: &str) -> (RawAdmissionRow, RawAdmissionRow) {
    let mut a = row.clone();
    let mut b = row.clone();
    b.icd9_code = code.to_string();
    b.note_id = None;
    for (j, (p, &u)) in plans.iter().zip(draws).enumerate() {
        let Some(v) = row.features[j] else { continue };
        match p.kind {
            FeatureKind::Indicator => {
                if v != 0.0 {
                    if u < 0.5 {
                        b.features[j] = Some(0.0);
                    } else {
                        a.features[j] = Some(0.0);
                    }
                }
            }
            FeatureKind::Count => {
                let first = (v * u).floor();
                a.features[j] = Some(first);
                b.features[j] = Some(v - first);
            }
            FeatureKind::Scalar | FeatureKind::Age => {
                if u < 0.3 {
                    a.features[j] = None;
                } else if u < 0.6 {
                    b.features[j] = None;
                }
            }
        }
    }
    (a, b)
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    crate::schema::csv_error(path, e)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes `cohort.csv`, `summaries.tsv`, `embeddings.txt`, `labels.csv`,
/// `schema.csv`, `truth.json` and `synth_config.txt` into `dir`.
pub fn write_fixture(cohort: &SynthCohort, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let path = dir.join("cohort.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
    w.write_record(cohort_header(&cohort.schema)).map_err(|e| csv_err(&path, e))?;
    for r in &cohort.rows {
        let mut rec = vec![
            r.admission_id.clone(),
            r.subject_id.clone(),
            r.icd9_code.clone(),
            r.admit_date.format(DATE_FORMAT).to_string(),
            r.death_date.map(|d| d.format(DATE_FORMAT).to_string()).unwrap_or_default(),
            r.note_id.clone().unwrap_or_default(),
        ];
        rec.extend(r.features.iter().map(|v| fmt_opt(*v)));
        w.write_record(&rec).map_err(|e| csv_err(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let mut text = String::new();
    for (id, body) in &cohort.summaries {
        let _ = writeln!(text, "{id}\t{body}");
    }
    let path = dir.join("summaries.tsv");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;

    cohort.embeddings.write(&dir.join("embeddings.txt"))?;

    let path = dir.join("labels.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
    w.write_record(["admission_id", "label", "phenotype", "text_latent", "interaction_latent"])
        .map_err(|e| csv_err(&path, e))?;
    for t in &cohort.truth.admissions {
        w.write_record([
            t.admission_id.clone(),
            u8::from(t.label).to_string(),
            u8::from(t.phenotype).to_string(),
            t.text_latent.to_string(),
            t.interaction_latent.to_string(),
        ])
        .map_err(|e| csv_err(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    cohort.schema.write(&dir.join("schema.csv"))?;

    let path = dir.join("truth.json");
    let truth = serde_json::json!({
        "feature_directions": cohort.truth.feature_directions,
        "phenotype_loadings": cohort.truth.phenotype_loadings,
        "label_direction": cohort.truth.label_direction,
        "interaction_direction": cohort.truth.interaction_direction,
    });
    std::fs::write(&path, serde_json::to_string_pretty(&truth)?).map_err(|e| Error::io(&path, e))?;

    let path = dir.join("synth_config.txt");
    std::fs::write(&path, cohort.config.to_kv().to_string()).map_err(|e| Error::io(&path, e))
}
