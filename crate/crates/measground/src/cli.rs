//! The `measground` batch command line.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use measground_core::benchmark::{holdout_split, partition_refs, verify_disjointness, BenchmarkExample, CaptureRef, Verdict};
use measground_core::bracketsup::{aggregate, annotate, build_samples, AnnotatorClient, CandidateRecord, SampleSource, TrainingSample};
use measground_core::capture::{corpus_spec, synth_capture, SyntheticSceneSpec};
use measground_core::dataset::{balance, remove_placeholders, score_filter, DatasetManifest, ManifestStats};
use measground_core::isp::{make_bracket, render_proxy_with_mask, RenderedRgb};
use measground_core::lost_signal::analyze;
use measground_core::meas_xyz::{meas_xyz_transform, MeasXyzImage};
use measground_core::mock::HeuristicAnnotator;
use measground_core::probe::{condition_check, ProbeConfig, GRAD_CHECK_THRESHOLD};
use measground_core::text_metrics::{evaluate_run, JudgeClient, MetricReport, NormalizedMatchJudge, Predictions};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::bundle::{find_bundles, load_capture_bundle, save_capture_bundle};
use crate::clients::{HttpAnnotator, HttpJudge, TranscriptAnnotator, TranscriptJudge};
use crate::config::{RunConfig, EXACT_MATCH_JUDGE, HEURISTIC_ANNOTATOR};
use crate::error::{Error, Result};
use crate::manifest::{export_manifest, read_jsonl, stats_path, write_jsonl, StatsFile};
use crate::views::{
    emit_report, load_meas_xyz, load_rendered, proxy_stem, read_json, save_meas_xyz, save_rendered, with_ext, write_json, PlaneHeader,
};

#[derive(Debug, Parser)]
#[command(name = "measground", version, about = "Measurement-domain RAW supervision pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Overrides applied on top of the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// JSON run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output root.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Exposure gain for single renders.
    #[arg(long, global = true, value_name = "F")]
    pub gain: Option<f64>,
    /// Bracket gains, comma separated.
    #[arg(long, global = true, value_name = "CSV")]
    pub exposures: Option<String>,
    /// Annotator transcript (JSONL) or `heuristic`.
    #[arg(long, global = true, value_name = "PATH")]
    pub mock_annotator: Option<String>,
    /// Judge transcript (JSONL) or `exact`.
    #[arg(long, global = true, value_name = "PATH")]
    pub mock_judge: Option<String>,
    #[arg(long, global = true, value_name = "F")]
    pub tau: Option<f64>,
    #[arg(long, global = true, value_name = "N")]
    pub bins: Option<usize>,
    /// Score floor.
    #[arg(long, global = true, value_name = "F")]
    pub floor: Option<f64>,
    /// Manifest target size.
    #[arg(long, global = true, value_name = "N")]
    pub target: Option<usize>,
    /// Benchmark fraction of the capture-level split.
    #[arg(long, global = true, value_name = "F")]
    pub fraction: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct InputArg {
    #[arg(long, value_name = "PATH")]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct WithMeasArgs {
    #[arg(long, value_name = "PATH")]
    pub input: Option<PathBuf>,
    /// Directory of measurement views.
    #[arg(long, value_name = "DIR")]
    pub measxyz: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SplitArgs {
    #[arg(long, value_name = "PATH")]
    pub input: Option<PathBuf>,
    /// Directory holding the RGB proxies referenced by benchmark examples.
    #[arg(long, value_name = "DIR")]
    pub proxies: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct VerifyArgs {
    #[arg(long, value_name = "PATH")]
    pub train: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub bench: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct EvalArgs {
    /// Benchmark manifest.
    #[arg(long, value_name = "PATH")]
    pub input: Option<PathBuf>,
    /// JSONL of `{capture_id, question, prediction}`.
    #[arg(long, value_name = "PATH")]
    pub predictions: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ProbeArgs {
    /// Probe configuration JSON.
    #[arg(long, value_name = "PATH")]
    pub probe: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SynthArgs {
    /// Number of random captures.
    #[arg(long, value_name = "N")]
    pub count: Option<usize>,
    /// Draw a single scene from this description instead.
    #[arg(long, value_name = "PATH")]
    pub spec: Option<PathBuf>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Validate capture bundles and copy them under the output root.
    Ingest(InputArg),
    /// Compute measurement-domain XYZ views.
    Measxyz(InputArg),
    /// Render one proxy per view.
    Render(InputArg),
    /// Render the exposure bracket and annotate every proxy.
    Bracket(WithMeasArgs),
    /// Invert proxy renders and report unrecoverable signal.
    LostSignal(InputArg),
    /// Annotate existing proxy renders.
    Annotate(WithMeasArgs),
    /// Fold candidates into instruction records and training samples.
    Aggregate(WithMeasArgs),
    /// Apply the score floor and placeholder filter.
    Filter(InputArg),
    /// Capped, seeded balancing to the target size.
    Balance(InputArg),
    /// Grouped capture-level hold-out split.
    Split(SplitArgs),
    /// Check a train/benchmark pair for leakage.
    VerifySplit(VerifyArgs),
    /// Score predictions against a benchmark manifest.
    Eval(EvalArgs),
    /// Gradient and identity checks of the conditioning probe.
    ConditionCheck(ProbeArgs),
    /// Write synthetic capture bundles.
    Synth(SynthArgs),
    /// Summarize the artifacts under the output root.
    Report,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Measxyz(_) => "measxyz",
            Command::Render(_) => "render",
            Command::Bracket(_) => "bracket",
            Command::LostSignal(_) => "lost-signal",
            Command::Annotate(_) => "annotate",
            Command::Aggregate(_) => "aggregate",
            Command::Filter(_) => "filter",
            Command::Balance(_) => "balance",
            Command::Split(_) => "split",
            Command::VerifySplit(_) => "verify-split",
            Command::Eval(_) => "eval",
            Command::ConditionCheck(_) => "condition-check",
            Command::Synth(_) => "synth",
            Command::Report => "report",
        }
    }
}

/// Result of a subcommand that ran to completion.
#[derive(Debug, Default)]
pub struct Outcome {
    pub counts: BTreeMap<String, Value>,
    /// Non-zero when the stage completed but its check failed.
    pub status: i32,
}

impl Outcome {
    fn count(mut self, key: &str, v: impl Into<Value>) -> Outcome {
        self.counts.insert(key.into(), v.into());
        self
    }
}

fn parse_exposures(csv: &str) -> Result<Vec<f64>> {
    csv.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| Error::ConfigInvalid(format!("exposures: {s:?} is not a number"))))
        .collect()
}

/// Config file (if any) with flag overrides applied, validated.
pub fn resolve_config(g: &GlobalArgs) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = &g.out {
        cfg.out = v.clone();
    }
    if let Some(v) = g.seed {
        cfg.seed = v;
    }
    if let Some(v) = g.gain {
        cfg.render.exposure_gain = v;
    }
    if let Some(v) = &g.exposures {
        cfg.exposures = parse_exposures(v)?;
    }
    if let Some(v) = &g.mock_annotator {
        cfg.mock_annotator = Some(v.clone());
    }
    if let Some(v) = &g.mock_judge {
        cfg.mock_judge = Some(v.clone());
    }
    if let Some(v) = g.tau {
        cfg.tau = v;
    }
    if let Some(v) = g.bins {
        cfg.bins = v;
    }
    if let Some(v) = g.floor {
        cfg.score_floor = v;
    }
    if let Some(v) = g.target {
        cfg.target_size = v;
    }
    if let Some(v) = g.fraction {
        cfg.split_fraction = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn annotator(cfg: &RunConfig) -> Result<Box<dyn AnnotatorClient>> {
    match (&cfg.mock_annotator, &cfg.annotator_endpoint) {
        (Some(m), _) if m == HEURISTIC_ANNOTATOR => Ok(Box::new(HeuristicAnnotator)),
        (Some(p), _) => Ok(Box::new(TranscriptAnnotator::load(Path::new(p))?)),
        (None, Some(url)) => Ok(Box::new(HttpAnnotator::new(url.clone(), Duration::from_secs(cfg.timeout_secs)))),
        (None, None) => Err(Error::ConfigInvalid("mock_annotator: no annotator configured (set annotator_endpoint or mock_annotator)".into())),
    }
}

fn judge_client(cfg: &RunConfig) -> Result<Box<dyn JudgeClient>> {
    match (&cfg.mock_judge, &cfg.judge_endpoint) {
        (Some(m), _) if m == EXACT_MATCH_JUDGE => Ok(Box::new(NormalizedMatchJudge)),
        (Some(p), _) => Ok(Box::new(TranscriptJudge::load(Path::new(p))?)),
        (None, Some(url)) => Ok(Box::new(HttpJudge::new(url.clone(), Duration::from_secs(cfg.timeout_secs)))),
        (None, None) => Err(Error::ConfigInvalid("mock_judge: no judge configured (set judge_endpoint or mock_judge)".into())),
    }
}

/// Leading component of a RAW path, used as the corpus source label.
pub fn source_prefix(raw_path: &str) -> String {
    raw_path.split(['/', '\\']).find(|s| !s.is_empty()).unwrap_or("unknown").to_string()
}

/// Stems of the float-plane views in `dir` (files with both `.json` and `.bin`).
fn view_stems(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut stems = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "bin") {
            let stem = path.with_extension("");
            if with_ext(&stem, "json").is_file() {
                stems.push(stem);
            }
        }
    }
    stems.sort();
    Ok(stems)
}

/// Stems of rendered proxies in `dir`.
fn render_stems(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut stems = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "ppm" || e == "f64") {
            stems.push(path.with_extension(""));
        }
    }
    stems.sort();
    stems.dedup();
    Ok(stems)
}

fn load_views(dir: &Path) -> Result<Vec<(MeasXyzImage, PlaneHeader)>> {
    view_stems(dir)?.iter().map(|s| load_meas_xyz(s)).collect()
}

fn annotate_proxies(
    proxies: &[RenderedRgb],
    prefix: &str,
    client: &dyn AnnotatorClient,
    max_retries: u32,
) -> Result<(Vec<CandidateRecord>, u64)> {
    let mut out = Vec::new();
    let mut retries = 0u64;
    for proxy in proxies {
        let outcome = annotate(proxy, prefix, &client, max_retries)?;
        retries += outcome.retries as u64;
        for (i, reason) in &outcome.dropped {
            warn!("{} gain {}: dropped candidate {i}: {reason}", proxy.capture_id, proxy.params.exposure_gain);
        }
        if let Some(payload) = &outcome.malformed {
            warn!("{} gain {}: malformed annotator response skipped: {payload}", proxy.capture_id, proxy.params.exposure_gain);
        }
        out.extend(outcome.candidates);
    }
    Ok((out, retries))
}

fn run_synth(cfg: &RunConfig, args: &SynthArgs) -> Result<Outcome> {
    let dir = cfg.out.join("captures");
    let specs: Vec<SyntheticSceneSpec> = match args.spec.as_ref().or(cfg.synth.spec.as_ref()) {
        Some(p) => vec![read_json(p)?],
        None => {
            let n = args.count.unwrap_or(cfg.synth.count);
            (0..n).map(|i| corpus_spec(i, cfg.seed, cfg.synth.width, cfg.synth.height)).collect()
        }
    };
    for (i, spec) in specs.iter().enumerate() {
        let synth = synth_capture(spec, cfg.seed.wrapping_add(i as u64))?;
        let bundle = dir.join(&spec.capture_id);
        save_capture_bundle(&synth.capture, &bundle)?;
        write_json(&bundle.join("scene.json"), spec)?;
    }
    info!("wrote {} synthetic bundles to {}", specs.len(), dir.display());
    Ok(Outcome::default().count("captures", specs.len()))
}

fn run_ingest(cfg: &RunConfig, args: &InputArg) -> Result<Outcome> {
    let input = args
        .input
        .clone()
        .or_else(|| cfg.input.clone())
        .ok_or_else(|| Error::ConfigInvalid("input: ingest needs --input or config.input".into()))?;
    let captures = find_bundles(&input)?.iter().map(|b| load_capture_bundle(b)).collect::<Result<Vec<_>>>()?;
    let mut refs: Vec<CaptureRef> = Vec::with_capacity(captures.len());
    let dest = cfg.out.join("captures");
    for c in &captures {
        if refs.iter().any(|r| r.capture_id == c.capture_id) {
            return Err(measground_core::Error::InvalidCapture(format!("duplicate capture_id {}", c.capture_id)).into());
        }
        save_capture_bundle(c, &dest.join(&c.capture_id))?;
        refs.push(c.into());
    }
    write_jsonl(&cfg.out.join("captures.jsonl"), &refs)?;
    info!("ingested {} captures from {}", refs.len(), input.display());
    Ok(Outcome::default().count("captures", refs.len()))
}

fn run_measxyz(cfg: &RunConfig, args: &InputArg) -> Result<Outcome> {
    let input = args.input.clone().unwrap_or_else(|| cfg.out.join("captures"));
    let dir = cfg.out.join("measxyz");
    let mut negatives = 0usize;
    let bundles = find_bundles(&input)?;
    for b in &bundles {
        let capture = load_capture_bundle(b)?;
        let z = meas_xyz_transform(&capture)?;
        negatives += z.negatives_clamped;
        save_meas_xyz(&z, Some(&capture.raw_path), &dir.join(&capture.capture_id))?;
    }
    info!("wrote {} measurement views to {}", bundles.len(), dir.display());
    Ok(Outcome::default().count("views", bundles.len()).count("negatives_clamped", negatives))
}

fn run_render(cfg: &RunConfig, args: &InputArg) -> Result<Outcome> {
    let input = args.input.clone().unwrap_or_else(|| cfg.out.join("measxyz"));
    let dir = cfg.out.join("render");
    let views = load_views(&input)?;
    let mut clipped = 0usize;
    for (z, _) in &views {
        let (r, mask) = render_proxy_with_mask(z, &cfg.render)?;
        clipped += mask.count();
        save_rendered(&r, &proxy_stem(&dir, &z.capture_id, cfg.render.exposure_gain))?;
    }
    Ok(Outcome::default().count("renders", views.len()).count("clipped_pixels", clipped))
}

fn run_lost_signal(cfg: &RunConfig, args: &InputArg) -> Result<Outcome> {
    let input = args.input.clone().unwrap_or_else(|| cfg.out.join("measxyz"));
    let views = load_views(&input)?;
    let mut total_clipped = 0.0;
    for (z, _) in &views {
        let report = analyze(z, &cfg.render, cfg.tau, cfg.bins)?;
        total_clipped += report.clipped_fraction;
        let dir = proxy_stem(&cfg.out.join("lost_signal"), &z.capture_id, cfg.render.exposure_gain);
        emit_report(&report, &dir)?;
        info!("{}: clipped_fraction={} lost_pixels={}", z.capture_id, report.clipped_fraction, report.lost_count());
    }
    let mean = if views.is_empty() { 0.0 } else { total_clipped / views.len() as f64 };
    Ok(Outcome::default().count("reports", views.len()).count("mean_clipped_fraction", mean))
}

fn run_bracket(cfg: &RunConfig, args: &WithMeasArgs) -> Result<Outcome> {
    let input = args.input.clone().or_else(|| args.measxyz.clone()).unwrap_or_else(|| cfg.out.join("measxyz"));
    let client = annotator(cfg)?;
    let (proxy_dir, cand_dir) = (cfg.out.join("proxies"), cfg.out.join("candidates"));
    let views = load_views(&input)?;
    let (mut proxies, mut candidates, mut retries) = (0usize, 0usize, 0u64);
    for (z, header) in &views {
        let bracket = make_bracket(z, &cfg.render, &cfg.exposures)?;
        for p in &bracket {
            save_rendered(p, &proxy_stem(&proxy_dir, &z.capture_id, p.params.exposure_gain))?;
        }
        let prefix = source_prefix(header.raw_path.as_deref().unwrap_or(""));
        let (cands, r) = annotate_proxies(&bracket, &prefix, client.as_ref(), cfg.max_retries)?;
        proxies += bracket.len();
        candidates += cands.len();
        retries += r;
        write_jsonl(&cand_dir.join(format!("{}.jsonl", z.capture_id)), &cands)?;
    }
    info!("annotated {proxies} proxies of {} captures: {candidates} candidates", views.len());
    Ok(Outcome::default().count("captures", views.len()).count("proxies", proxies).count("candidates", candidates).count("retries", retries))
}

fn run_annotate(cfg: &RunConfig, args: &WithMeasArgs) -> Result<Outcome> {
    let input = args.input.clone().unwrap_or_else(|| cfg.out.join("render"));
    let meas_dir = args.measxyz.clone().unwrap_or_else(|| cfg.out.join("measxyz"));
    let client = annotator(cfg)?;
    let mut by_capture: BTreeMap<String, Vec<RenderedRgb>> = BTreeMap::new();
    for stem in render_stems(&input)? {
        let r = load_rendered(&stem)?;
        by_capture.entry(r.capture_id.clone()).or_default().push(r);
    }
    let (mut candidates, mut retries, mut proxies) = (0usize, 0u64, 0usize);
    for (id, mut list) in by_capture.iter_mut().map(|(k, v)| (k, std::mem::take(v))) {
        list.sort_by(|a, b| a.params.exposure_gain.total_cmp(&b.params.exposure_gain));
        let header_path = with_ext(&meas_dir.join(id), "json");
        if !header_path.is_file() {
            return Err(Error::MissingMeasXyz { capture_id: id.clone(), path: header_path });
        }
        let header: PlaneHeader = read_json(&header_path)?;
        let prefix = source_prefix(header.raw_path.as_deref().unwrap_or(""));
        let (cands, r) = annotate_proxies(&list, &prefix, client.as_ref(), cfg.max_retries)?;
        proxies += list.len();
        candidates += cands.len();
        retries += r;
        write_jsonl(&cfg.out.join("candidates").join(format!("{id}.jsonl")), &cands)?;
    }
    Ok(Outcome::default().count("proxies", proxies).count("candidates", candidates).count("retries", retries))
}

fn run_aggregate(cfg: &RunConfig, args: &WithMeasArgs) -> Result<Outcome> {
    let input = args.input.clone().unwrap_or_else(|| cfg.out.join("candidates"));
    let meas_dir = args.measxyz.clone().unwrap_or_else(|| cfg.out.join("measxyz"));
    let entries = std::fs::read_dir(&input).map_err(|e| Error::io(&input, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "jsonl"))
        .collect();
    files.sort();
    let (mut samples, mut candidates, mut empty) = (Vec::new(), 0usize, 0usize);
    for f in &files {
        let cands: Vec<CandidateRecord> = read_jsonl(f)?;
        let id = f.file_stem().expect("jsonl file has a stem").to_string_lossy().into_owned();
        if cands.is_empty() {
            empty += 1;
            continue;
        }
        candidates += cands.len();
        let records = aggregate(&cands)?;
        let stem = meas_dir.join(&id);
        let (header_path, bin_path) = (with_ext(&stem, "json"), with_ext(&stem, "bin"));
        if !header_path.is_file() || !bin_path.is_file() {
            return Err(Error::MissingMeasXyz { capture_id: id, path: bin_path });
        }
        let header: PlaneHeader = read_json(&header_path)?;
        let metadata = header.metadata.ok_or_else(|| Error::SchemaViolation {
            path: header_path.clone(),
            line: 1,
            msg: "measurement view header lacks metadata".into(),
        })?;
        let source = SampleSource {
            capture_id: header.capture_id,
            meas_xyz_path: bin_path.strip_prefix(&cfg.out).unwrap_or(&bin_path).to_string_lossy().into_owned(),
            raw_path: header.raw_path.unwrap_or_default(),
            metadata,
        };
        samples.extend(build_samples(&source, &records));
    }
    write_jsonl(&cfg.out.join("samples.jsonl"), &samples)?;
    if empty > 0 {
        warn!("{empty} captures had no candidates");
    }
    Ok(Outcome::default().count("captures", files.len() - empty).count("candidates", candidates).count("samples", samples.len()))
}

fn tally(samples: &[TrainingSample], stats: &mut ManifestStats) {
    for s in samples {
        let r = &s.record;
        *stats.by_source_prefix.entry(r.source_prefix.clone()).or_default() += 1;
        *stats.by_question_type.entry(r.question_type.clone()).or_default() += 1;
        *stats.by_template_id.entry(r.template_id.clone()).or_default() += 1;
    }
}

fn run_filter(cfg: &RunConfig, args: &InputArg) -> Result<Outcome> {
    let input = args.input.clone().unwrap_or_else(|| cfg.out.join("samples.jsonl"));
    let pool: Vec<TrainingSample> = read_jsonl(&input)?;
    let input_total = pool.len();
    let scored = score_filter(pool, cfg.score_floor)?;
    let below = input_total - scored.len();
    let (kept, placeholders) = remove_placeholders(scored, &cfg.placeholders)?;
    let mut stats = ManifestStats {
        input_total,
        kept_total: kept.len(),
        dropped_total: input_total - kept.len(),
        below_score_floor: below,
        placeholders_dropped: placeholders,
        ..Default::default()
    };
    tally(&kept, &mut stats);
    let manifest = DatasetManifest { samples: kept, stats, score_floor: cfg.score_floor, target_size: cfg.target_size };
    export_manifest(&manifest, &cfg.out.join("filtered.jsonl"))?;
    info!("filter: {input_total} in, {} kept, {below} below floor, {placeholders} placeholders", manifest.samples.len());
    Ok(Outcome::default()
        .count("input", input_total)
        .count("kept", manifest.samples.len())
        .count("below_score_floor", below)
        .count("placeholders_dropped", placeholders))
}

fn run_balance(cfg: &RunConfig, args: &InputArg) -> Result<Outcome> {
    let input = args.input.clone().unwrap_or_else(|| cfg.out.join("filtered.jsonl"));
    let pool: Vec<TrainingSample> = read_jsonl(&input)?;
    let mut manifest = balance(pool, cfg.caps.resolve(), cfg.target_size, cfg.seed)?;
    // carry the upstream accounting when the input is a filter output
    let prior_path = stats_path(&input);
    if prior_path.is_file() {
        let prior: StatsFile = read_json(&prior_path)?;
        let s = &mut manifest.stats;
        s.input_total = prior.stats.input_total;
        s.below_score_floor = prior.stats.below_score_floor;
        s.placeholders_dropped = prior.stats.placeholders_dropped;
        s.dropped_total = s.input_total - s.kept_total;
        manifest.score_floor = prior.score_floor;
    }
    if manifest.stats.shortfall {
        warn!("pool of {} filled only {} of {} target samples", input.display(), manifest.samples.len(), cfg.target_size);
    }
    export_manifest(&manifest, &cfg.out.join("manifest.jsonl"))?;
    Ok(Outcome::default()
        .count("kept", manifest.samples.len())
        .count("cap_rejected", manifest.stats.cap_rejected)
        .count("duplicates_dropped", manifest.stats.duplicates_dropped)
        .count("shortfall", manifest.stats.shortfall))
}

/// Any line of a split input: a training sample, a benchmark example or a
/// bare capture reference.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum SplitRecord {
    Sample(TrainingSample),
    Example(BenchmarkExample),
    Ref(CaptureRef),
}

impl SplitRecord {
    pub fn capture_ref(&self) -> CaptureRef {
        match self {
            SplitRecord::Sample(s) => s.into(),
            SplitRecord::Example(e) => e.into(),
            SplitRecord::Ref(r) => r.clone(),
        }
    }
}

/// One reference per distinct capture, in first-seen order.
fn unique_refs(records: &[SplitRecord]) -> Vec<CaptureRef> {
    let mut seen = std::collections::BTreeSet::new();
    records.iter().map(SplitRecord::capture_ref).filter(|r| seen.insert(r.capture_id.clone())).collect()
}

fn run_split(cfg: &RunConfig, args: &SplitArgs) -> Result<Outcome> {
    let input = args.input.clone().unwrap_or_else(|| cfg.out.join("manifest.jsonl"));
    let proxies = args.proxies.clone().unwrap_or_else(|| cfg.out.join("proxies"));
    let records: Vec<SplitRecord> = read_jsonl(&input)?;
    let refs = unique_refs(&records);
    let split = holdout_split(&refs, cfg.split_fraction, cfg.seed)?;
    for w in &split.warnings {
        warn!("{w}");
    }
    let dir = cfg.out.join("split");
    let (train_refs, bench_refs) = partition_refs(&refs, &split);
    write_json(&dir.join("split.json"), &split)?;
    write_jsonl(&dir.join("train_refs.jsonl"), &train_refs)?;
    write_jsonl(&dir.join("bench_refs.jsonl"), &bench_refs)?;

    let bench_ids: std::collections::BTreeSet<&str> = split.bench_ids.iter().map(String::as_str).collect();
    let mut train = Vec::new();
    let mut bench = Vec::new();
    for r in &records {
        if let SplitRecord::Sample(s) = r {
            if bench_ids.contains(s.capture_id.as_str()) {
                let stem = proxy_stem(&proxies, &s.capture_id, cfg.render.exposure_gain);
                let ppm = with_ext(&stem, "ppm");
                let ppm = ppm.strip_prefix(&cfg.out).unwrap_or(&ppm);
                bench.push(BenchmarkExample::from_sample(s, ppm.to_string_lossy(), None));
            } else {
                train.push(s.clone());
            }
        }
    }
    write_jsonl(&dir.join("train.jsonl"), &train)?;
    write_jsonl(&dir.join("benchmark.jsonl"), &bench)?;
    info!("split {} captures: {} train, {} benchmark", refs.len(), train_refs.len(), bench_refs.len());
    Ok(Outcome::default()
        .count("train_captures", train_refs.len())
        .count("bench_captures", bench_refs.len())
        .count("train_samples", train.len())
        .count("bench_examples", bench.len()))
}

fn run_verify(cfg: &RunConfig, args: &VerifyArgs) -> Result<Outcome> {
    let train_path = args.train.clone().unwrap_or_else(|| cfg.out.join("split").join("train.jsonl"));
    let bench_path = args.bench.clone().unwrap_or_else(|| cfg.out.join("split").join("benchmark.jsonl"));
    let train = unique_refs(&read_jsonl::<SplitRecord>(&train_path)?);
    let bench = unique_refs(&read_jsonl::<SplitRecord>(&bench_path)?);
    let report = verify_disjointness(&train, &bench);
    write_json(&cfg.out.join("disjointness.json"), &report)?;
    let status = serde_json::to_value(report.status).expect("verdict serializes");
    println!("disjointness: {}", status.as_str().unwrap_or_default());
    let offending: Vec<String> = [
        ("capture_id", &report.capture_id_overlap),
        ("raw_path", &report.raw_path_overlap),
        ("scene_id", &report.scene_id_overlap),
        ("session_id", &report.session_id_overlap),
        ("device_id", &report.device_id_overlap),
    ]
    .iter()
    .flat_map(|(k, v)| v.iter().map(move |x| format!("{k}={x}")))
    .collect();
    for o in &offending {
        println!("  overlap {o}");
    }
    Ok(Outcome {
        status: if report.status == Verdict::Fail { 1 } else { 0 },
        ..Outcome::default().count("status", status).count("train", report.train_count).count("bench", report.bench_count)
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub capture_id: String,
    pub question: String,
    pub prediction: String,
}

fn run_eval(cfg: &RunConfig, args: &EvalArgs) -> Result<Outcome> {
    let input = args.input.clone().unwrap_or_else(|| cfg.out.join("split").join("benchmark.jsonl"));
    let preds_path = args.predictions.clone().unwrap_or_else(|| cfg.out.join("predictions.jsonl"));
    let manifest: Vec<BenchmarkExample> = read_jsonl(&input)?;
    let mut predictions = Predictions::new();
    for p in read_jsonl::<PredictionRecord>(&preds_path)? {
        predictions.insert((p.capture_id, p.question), p.prediction);
    }
    let client = judge_client(cfg)?;
    let report: MetricReport = evaluate_run(&predictions, &manifest, &client.as_ref(), cfg.max_retries)?;
    let dir = cfg.out.join("eval");
    write_json(&dir.join("metrics.json"), &report)?;
    let table = report.render_table();
    let path = dir.join("metrics.txt");
    std::fs::write(&path, &table).map_err(|e| Error::io(&path, e))?;
    print!("{table}");
    Ok(Outcome::default()
        .count("examples", report.total)
        .count("missing_predictions", report.missing_predictions.len())
        .count("judge_accuracy", report.overall.judge_accuracy))
}

fn run_condition_check(cfg: &RunConfig, args: &ProbeArgs) -> Result<Outcome> {
    let probe = match args.probe.as_ref().or(cfg.probe_config.as_ref()) {
        Some(p) => read_json(p)?,
        None => ProbeConfig {
            depth: 4,
            hidden_dim: 8,
            inject_layers: None,
            seed: cfg.seed,
            per_layer_projection: false,
            eps: 1e-5,
            init_scale: 0.5,
        },
    };
    let check = condition_check(&probe)?;
    write_json(&cfg.out.join("condition_check.json"), &json!({ "config": probe, "result": check }))?;
    let verdict = if check.passed { "PASS" } else { "FAIL" };
    println!("max_relative_error={:e} threshold={:e} {verdict}", check.grad.max_relative_error, GRAD_CHECK_THRESHOLD);
    if !check.zero_projection_identity {
        println!("zero-projection identity violated");
    }
    Ok(Outcome {
        status: if check.passed { 0 } else { 1 },
        ..Outcome::default().count("max_relative_error", check.grad.max_relative_error).count("passed", check.passed)
    })
}

fn count_dirs_with(dir: &Path, file: &str) -> usize {
    std::fs::read_dir(dir).map(|rd| rd.filter_map(|e| e.ok()).filter(|e| e.path().join(file).is_file()).count()).unwrap_or(0)
}

fn run_report(cfg: &RunConfig) -> Result<Outcome> {
    let out = &cfg.out;
    let mut report = serde_json::Map::new();
    report.insert("captures".into(), count_dirs_with(&out.join("captures"), crate::bundle::SIDECAR_FILE).into());
    let views = if out.join("measxyz").is_dir() { view_stems(&out.join("measxyz"))?.len() } else { 0 };
    report.insert("measxyz_views".into(), views.into());

    let mut summaries = Vec::new();
    if let Ok(rd) = std::fs::read_dir(out.join("lost_signal")) {
        let mut dirs: Vec<PathBuf> = rd.filter_map(|e| e.ok().map(|e| e.path())).collect();
        dirs.sort();
        for d in dirs {
            let p = d.join("summary.json");
            if p.is_file() {
                summaries.push(read_json::<crate::views::LostSignalSummary>(&p)?);
            }
        }
    }
    if !summaries.is_empty() {
        let mean = summaries.iter().map(|s| s.clipped_fraction).sum::<f64>() / summaries.len() as f64;
        report.insert("lost_signal".into(), json!({ "reports": summaries.len(), "mean_clipped_fraction": mean }));
    }
    for name in ["filtered", "manifest"] {
        let p = out.join(format!("{name}.stats.json"));
        if p.is_file() {
            report.insert(format!("{name}_stats"), serde_json::to_value(read_json::<StatsFile>(&p)?).expect("stats serialize"));
        }
    }
    let p = out.join("disjointness.json");
    if p.is_file() {
        let v: Value = read_json(&p)?;
        report.insert("disjointness".into(), v.get("status").cloned().unwrap_or(Value::Null));
    }
    let p = out.join("eval").join("metrics.json");
    if p.is_file() {
        let m: MetricReport = read_json(&p)?;
        report.insert("metrics".into(), json!({ "total": m.total, "overall": m.overall }));
    }
    let report = Value::Object(report);
    write_json(&out.join("report.json"), &report)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(Outcome::default().count("sections", report.as_object().map_or(0, |o| o.len())))
}

pub fn run_command(cfg: &RunConfig, cmd: &Command) -> Result<Outcome> {
    match cmd {
        Command::Ingest(a) => run_ingest(cfg, a),
        Command::Measxyz(a) => run_measxyz(cfg, a),
        Command::Render(a) => run_render(cfg, a),
        Command::Bracket(a) => run_bracket(cfg, a),
        Command::LostSignal(a) => run_lost_signal(cfg, a),
        Command::Annotate(a) => run_annotate(cfg, a),
        Command::Aggregate(a) => run_aggregate(cfg, a),
        Command::Filter(a) => run_filter(cfg, a),
        Command::Balance(a) => run_balance(cfg, a),
        Command::Split(a) => run_split(cfg, a),
        Command::VerifySplit(a) => run_verify(cfg, a),
        Command::Eval(a) => run_eval(cfg, a),
        Command::ConditionCheck(a) => run_condition_check(cfg, a),
        Command::Synth(a) => run_synth(cfg, a),
        Command::Report => run_report(cfg),
    }
}

/// Merges this stage's entry into `<out>/run.json`.
fn record_run(cfg: &RunConfig, stage: &str, outcome: &Outcome, exit_code: i32) -> Result<()> {
    let path = cfg.out.join("run.json");
    let mut stages = std::fs::read_to_string(&path)
        .ok()
        .and_then(|t| serde_json::from_str::<Value>(&t).ok())
        .and_then(|v| v.get("stages").cloned())
        .and_then(|v| v.as_object().cloned())
        .unwrap_or_default();
    let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    stages.insert(stage.into(), json!({ "counts": outcome.counts, "exit_code": exit_code, "config_hash": cfg.hash() }));
    let run = json!({
        "config_hash": cfg.hash(),
        "config": cfg,
        "versions": { "measground": env!("CARGO_PKG_VERSION"), "measground-core": measground_core::VERSION },
        "last_stage": stage,
        "timestamp": timestamp,
        "stages": stages,
    });
    write_json(&path, &run)
}

/// Parses `args`, runs one subcommand and returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    crate::logging::init();
    let stage = cli.command.name();
    let cfg = match resolve_config(&cli.global) {
        Ok(cfg) => cfg,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    match run_command(&cfg, &cli.command) {
        Ok(outcome) => {
            if let Err(e) = record_run(&cfg, stage, &outcome, outcome.status) {
                log::error!("{e}");
                return 2;
            }
            info!("{stage} finished with status {}", outcome.status);
            outcome.status
        }
        Err(e) => {
            let code = e.exit_code();
            log::error!("{stage} failed: {e}");
            eprintln!("error: {e}");
            let _ = record_run(&cfg, stage, &Outcome::default().count("error", e.to_string()), code);
            code
        }
    }
}
