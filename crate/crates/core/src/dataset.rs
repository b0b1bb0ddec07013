//! Quality filtering and capped balancing of training samples.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bracketsup::TrainingSample;
use crate::text::{collapse_lower, question_key};
use crate::{Error, Result};

pub const DEFAULT_SCORE_FLOOR: f64 = 0.5;

/// Answer fragments that mark a failed annotation. The empty pattern
/// matches only an empty answer.
pub const DEFAULT_PLACEHOLDERS: [&str; 5] = ["i cannot", "unable to", "as an ai", "no answer", ""];

/// Keeps samples with `score >= floor`, in order.
pub fn score_filter(samples: Vec<TrainingSample>, floor: f64) -> Result<Vec<TrainingSample>> {
    if !(0.0..=1.0).contains(&floor) {
        return Err(Error::InvalidArgument(alloc::format!("score floor {floor} outside [0, 1]")));
    }
    Ok(samples.into_iter().filter(|s| s.record.score >= floor).collect())
}

pub fn is_placeholder(answer: &str, patterns: &[impl AsRef<str>]) -> bool {
    let answer = collapse_lower(answer);
    patterns.iter().any(|p| {
        let p = collapse_lower(p.as_ref());
        if p.is_empty() {
            answer.is_empty()
        } else {
            answer.contains(p.as_str())
        }
    })
}

/// Drops samples whose answer matches a placeholder pattern
/// (case-insensitive substring). Returns the survivors and the drop count.
pub fn remove_placeholders(samples: Vec<TrainingSample>, patterns: &[impl AsRef<str>]) -> Result<(Vec<TrainingSample>, usize)> {
    if patterns.is_empty() {
        return Err(Error::InvalidArgument("placeholder pattern list is empty".into()));
    }
    let before = samples.len();
    let kept: Vec<_> = samples.into_iter().filter(|s| !is_placeholder(&s.record.answer, patterns)).collect();
    let dropped = before - kept.len();
    Ok((kept, dropped))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BalanceCaps {
    pub per_source: usize,
    pub per_type: usize,
    pub per_template: usize,
}

impl BalanceCaps {
    pub const UNLIMITED: BalanceCaps = BalanceCaps { per_source: usize::MAX, per_type: usize::MAX, per_template: usize::MAX };
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestStats {
    /// Samples entering the pipeline.
    pub input_total: usize,
    /// Samples in the final manifest.
    pub kept_total: usize,
    pub dropped_total: usize,
    pub below_score_floor: usize,
    pub placeholders_dropped: usize,
    pub duplicates_dropped: usize,
    pub cap_rejected: usize,
    /// The pool could not fill `target_size`.
    pub shortfall: bool,
    pub by_source_prefix: BTreeMap<String, usize>,
    pub by_question_type: BTreeMap<String, usize>,
    pub by_template_id: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub samples: Vec<TrainingSample>,
    pub stats: ManifestStats,
    pub score_floor: f64,
    pub target_size: usize,
}

fn canonical_order(a: &TrainingSample, b: &TrainingSample) -> Ordering {
    let (ra, rb) = (&a.record, &b.record);
    a.capture_id
        .cmp(&b.capture_id)
        .then_with(|| ra.question.cmp(&rb.question))
        .then_with(|| ra.answer.cmp(&rb.answer))
        .then_with(|| rb.score.total_cmp(&ra.score))
        .then_with(|| ra.source_prefix.cmp(&rb.source_prefix))
        .then_with(|| ra.question_type.cmp(&rb.question_type))
        .then_with(|| ra.template_id.cmp(&rb.template_id))
        .then_with(|| ra.exposure_gain.total_cmp(&rb.exposure_gain))
        .then_with(|| a.meas_xyz_path.cmp(&b.meas_xyz_path))
}

/// Greedy pass in descending score: a sample is accepted while its source,
/// question type and template counts are all below their caps, until
/// `target_size` samples are in. Equal scores are ordered by a shuffle
/// seeded with `seed`, applied after a canonical sort so the input order
/// never matters. Repeated `(capture_id, question)` pairs are skipped.
pub fn balance(samples: Vec<TrainingSample>, caps: BalanceCaps, target_size: usize, seed: u64) -> Result<DatasetManifest> {
    if caps.per_source == 0 || caps.per_type == 0 || caps.per_template == 0 {
        return Err(Error::InvalidArgument("balance caps must be positive".into()));
    }
    if target_size == 0 {
        return Err(Error::InvalidArgument("target_size must be positive".into()));
    }
    let input_total = samples.len();
    let mut pool = samples;
    pool.sort_by(canonical_order);
    pool.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    pool.sort_by(|a, b| b.record.score.total_cmp(&a.record.score));

    let mut stats = ManifestStats { input_total, ..Default::default() };
    let mut seen: BTreeSet<(String, String)> = BTreeSet::new();
    let mut accepted = Vec::with_capacity(target_size.min(pool.len()));
    for s in pool {
        if accepted.len() == target_size {
            break;
        }
        let key = (s.capture_id.clone(), question_key(&s.record.question));
        if seen.contains(&key) {
            stats.duplicates_dropped += 1;
            continue;
        }
        let r = &s.record;
        let count = |m: &BTreeMap<String, usize>, k: &str| m.get(k).copied().unwrap_or(0);
        if count(&stats.by_source_prefix, &r.source_prefix) >= caps.per_source
            || count(&stats.by_question_type, &r.question_type) >= caps.per_type
            || count(&stats.by_template_id, &r.template_id) >= caps.per_template
        {
            stats.cap_rejected += 1;
            continue;
        }
        *stats.by_source_prefix.entry(r.source_prefix.clone()).or_default() += 1;
        *stats.by_question_type.entry(r.question_type.clone()).or_default() += 1;
        *stats.by_template_id.entry(r.template_id.clone()).or_default() += 1;
        seen.insert(key);
        accepted.push(s);
    }
    stats.kept_total = accepted.len();
    stats.dropped_total = input_total - accepted.len();
    stats.shortfall = accepted.len() < target_size;
    Ok(DatasetManifest { samples: accepted, stats, score_floor: 0.0, target_size })
}

/// Settings for [`build_manifest`].
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub score_floor: f64,
    pub placeholders: Vec<String>,
    pub caps: BalanceCaps,
    pub target_size: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            score_floor: DEFAULT_SCORE_FLOOR,
            placeholders: DEFAULT_PLACEHOLDERS.iter().map(|s| String::from(*s)).collect(),
            caps: BalanceCaps::UNLIMITED,
            target_size: 150_000,
            seed: 0,
        }
    }
}

/// Score floor, placeholder removal, then balancing, with stage accounting.
pub fn build_manifest(pool: Vec<TrainingSample>, cfg: &PipelineConfig) -> Result<DatasetManifest> {
    let input_total = pool.len();
    let scored = score_filter(pool, cfg.score_floor)?;
    let below = input_total - scored.len();
    let (clean, placeholders) = remove_placeholders(scored, &cfg.placeholders)?;
    let mut manifest = balance(clean, cfg.caps, cfg.target_size, cfg.seed)?;
    manifest.score_floor = cfg.score_floor;
    let stats = &mut manifest.stats;
    stats.input_total = input_total;
    stats.below_score_floor = below;
    stats.placeholders_dropped = placeholders;
    stats.dropped_total = input_total - stats.kept_total;
    Ok(manifest)
}
