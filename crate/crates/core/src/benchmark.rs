//! Held-out benchmark construction: grouped capture-level splits, leakage
//! verification and capability tagging.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bracketsup::TrainingSample;
use crate::capture::{CameraMetadata, RawCapture};
use crate::text::{answer_key, collapse_lower};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CapabilityDimension {
    CAG,
    NG,
    DSG,
    HER,
    LER,
    STR,
    GVG,
    CVR,
    SRU,
    MSQ,
    EAQ,
    DS,
    AEI,
    BVV,
}

impl CapabilityDimension {
    pub const ALL: [CapabilityDimension; 14] = [
        CapabilityDimension::CAG,
        CapabilityDimension::NG,
        CapabilityDimension::DSG,
        CapabilityDimension::HER,
        CapabilityDimension::LER,
        CapabilityDimension::STR,
        CapabilityDimension::GVG,
        CapabilityDimension::CVR,
        CapabilityDimension::SRU,
        CapabilityDimension::MSQ,
        CapabilityDimension::EAQ,
        CapabilityDimension::DS,
        CapabilityDimension::AEI,
        CapabilityDimension::BVV,
    ];

    pub fn abbrev(self) -> &'static str {
        use CapabilityDimension::*;
        match self {
            CAG => "CAG",
            NG => "NG",
            DSG => "DSG",
            HER => "HER",
            LER => "LER",
            STR => "STR",
            GVG => "GVG",
            CVR => "CVR",
            SRU => "SRU",
            MSQ => "MSQ",
            EAQ => "EAQ",
            DS => "DS",
            AEI => "AEI",
            BVV => "BVV",
        }
    }

    pub fn full_name(self) -> &'static str {
        use CapabilityDimension::*;
        match self {
            CAG => "Chromatic Attribute Grounding",
            NG => "Numerosity Grounding",
            DSG => "Descriptive Scene Grounding",
            HER => "HDR Evidence Recovery",
            LER => "Low-Illumination Evidence Recovery",
            STR => "Scene Text Recognition",
            GVG => "General Visual Grounding",
            CVR => "Compositional Visual Reasoning",
            SRU => "Spatial Relation Understanding",
            MSQ => "Manner and State Queries",
            EAQ => "Entity and Attribute Queries",
            DS => "Discriminative Selection",
            AEI => "Agent and Entity Identification",
            BVV => "Binary Visual Verification",
        }
    }

    pub fn parse(s: &str) -> Option<CapabilityDimension> {
        CapabilityDimension::ALL.into_iter().find(|d| d.abbrev() == s)
    }
}

impl fmt::Display for CapabilityDimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.abbrev())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkExample {
    pub capture_id: String,
    pub meas_xyz_path: String,
    /// Matched RGB view for baseline comparisons.
    pub rgb_proxy_path: String,
    pub raw_path: String,
    pub question: String,
    pub reference_answer: String,
    pub dimension: CapabilityDimension,
    pub metadata: CameraMetadata,
}

impl BenchmarkExample {
    /// Converts an annotated sample of a held-out capture.
    pub fn from_sample(sample: &TrainingSample, rgb_proxy_path: impl Into<String>, dimension: Option<CapabilityDimension>) -> BenchmarkExample {
        BenchmarkExample {
            capture_id: sample.capture_id.clone(),
            meas_xyz_path: sample.meas_xyz_path.clone(),
            rgb_proxy_path: rgb_proxy_path.into(),
            raw_path: sample.raw_path.clone(),
            question: sample.record.question.clone(),
            reference_answer: sample.record.answer.clone(),
            dimension: tag_capability(&sample.record.question, &sample.record.answer, dimension),
            metadata: sample.metadata.clone(),
        }
    }
}

const COLOR_WORDS: &[&str] = &[
    "color", "colour", "colors", "colours", "red", "green", "blue", "yellow", "orange", "purple", "violet", "pink", "brown",
    "black", "white", "gray", "grey", "cyan", "magenta", "beige", "golden", "silver",
];
const TEXT_WORDS: &[&str] = &[
    "read", "reads", "written", "write", "writes", "say", "says", "spell", "spelled", "word", "words", "text", "letter",
    "letters", "inscription", "caption", "printed",
];
const CHOICE_WORDS: &[&str] = &["which", "choose", "select", "option", "options"];
const POSITION_WORDS: &[&str] = &[
    "where", "left", "right", "above", "below", "under", "underneath", "beneath", "behind", "beside", "between", "near",
    "next", "front", "top", "bottom", "over", "inside", "outside", "corner",
];

fn words(s: &str) -> Vec<String> {
    collapse_lower(s)
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(ToString::to_string)
        .collect()
}

/// Keyword tagger. The override always wins; otherwise the first matching
/// rule decides: counting, text reading, color, yes/no answer, choice
/// enumeration, position, and finally general grounding.
pub fn tag_capability(question: &str, answer: &str, override_dim: Option<CapabilityDimension>) -> CapabilityDimension {
    if let Some(d) = override_dim {
        return d;
    }
    let q = collapse_lower(question);
    let qw = words(question);
    let has = |list: &[&str]| qw.iter().any(|w| list.contains(&w.as_str()));
    if q.contains("how many") || q.contains("number of") || q.contains("count the") {
        return CapabilityDimension::NG;
    }
    if has(TEXT_WORDS) {
        return CapabilityDimension::STR;
    }
    if has(COLOR_WORDS) {
        return CapabilityDimension::CAG;
    }
    let a = answer_key(answer);
    let a = a.trim_end_matches(|c: char| !c.is_alphanumeric());
    if a == "yes" || a == "no" || a.starts_with("yes,") || a.starts_with("no,") {
        return CapabilityDimension::BVV;
    }
    if has(CHOICE_WORDS) || qw.iter().any(|w| w == "or") {
        return CapabilityDimension::DS;
    }
    if has(POSITION_WORDS) {
        return CapabilityDimension::SRU;
    }
    CapabilityDimension::GVG
}

/// Identity and grouping keys of a capture, as seen by the splitter.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CaptureRef {
    pub capture_id: String,
    pub raw_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
}

impl From<&RawCapture> for CaptureRef {
    fn from(c: &RawCapture) -> Self {
        CaptureRef {
            capture_id: c.capture_id.clone(),
            raw_path: c.raw_path.clone(),
            scene_id: c.metadata.scene_id.clone(),
            device_id: Some(c.metadata.device_id.clone()),
            session_id: c.metadata.session_id.clone(),
        }
    }
}

impl From<&TrainingSample> for CaptureRef {
    fn from(s: &TrainingSample) -> Self {
        CaptureRef {
            capture_id: s.capture_id.clone(),
            raw_path: s.raw_path.clone(),
            scene_id: s.metadata.scene_id.clone(),
            device_id: Some(s.metadata.device_id.clone()),
            session_id: s.metadata.session_id.clone(),
        }
    }
}

impl From<&BenchmarkExample> for CaptureRef {
    fn from(s: &BenchmarkExample) -> Self {
        CaptureRef {
            capture_id: s.capture_id.clone(),
            raw_path: s.raw_path.clone(),
            scene_id: s.metadata.scene_id.clone(),
            device_id: Some(s.metadata.device_id.clone()),
            session_id: s.metadata.session_id.clone(),
        }
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }

    fn link_by(&mut self, captures: &[CaptureRef], key: impl Fn(&CaptureRef) -> Option<&str>) {
        let mut first: BTreeMap<&str, usize> = BTreeMap::new();
        for (i, c) in captures.iter().enumerate() {
            if let Some(k) = key(c) {
                match first.get(k) {
                    Some(&j) => self.union(i, j),
                    None => {
                        first.insert(k, i);
                    }
                }
            }
        }
    }

    fn groups(&mut self) -> Vec<Vec<usize>> {
        let mut by_root: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in 0..self.parent.len() {
            let r = self.find(i);
            by_root.entry(r).or_default().push(i);
        }
        by_root.into_values().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitOutcome {
    pub train_ids: Vec<String>,
    pub bench_ids: Vec<String>,
    /// Grouping keys that were enforced, e.g. `["scene_id", "session_id"]`.
    pub group_keys: Vec<String>,
    pub warnings: Vec<String>,
}

fn describe_group(captures: &[CaptureRef], group: &[usize]) -> String {
    let mut keys: BTreeSet<String> = BTreeSet::new();
    for &i in group {
        let c = &captures[i];
        if let Some(s) = &c.scene_id {
            keys.insert(format!("scene_id={s}"));
        }
        if let Some(s) = &c.session_id {
            keys.insert(format!("session_id={s}"));
        }
    }
    if keys.is_empty() {
        keys.insert(format!("capture_id={}", captures[group[0]].capture_id));
    }
    keys.into_iter().collect::<Vec<_>>().join(",")
}

/// Capture-level hold-out split performed before any view is materialized.
///
/// Captures sharing a RAW path, scene or session always land on the same
/// side. Devices are also kept together when that still leaves a feasible
/// split; otherwise device separation is skipped with a warning. Groups are
/// visited in a seeded order and added to the benchmark side while it stays
/// within `round(bench_fraction · n)` captures.
pub fn holdout_split(captures: &[CaptureRef], bench_fraction: f64, seed: u64) -> Result<SplitOutcome> {
    if !(bench_fraction > 0.0 && bench_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("bench_fraction must be in (0, 1), got {bench_fraction}")));
    }
    let n = captures.len();
    let mut ids = BTreeSet::new();
    for c in captures {
        if !ids.insert(c.capture_id.as_str()) {
            return Err(Error::InvalidArgument(format!("duplicate capture_id {}", c.capture_id)));
        }
    }
    let train_limit = (1.0 - bench_fraction) * n as f64;
    let mut warnings = Vec::new();
    let mut group_keys = Vec::new();

    let mut uf = UnionFind::new(n);
    uf.link_by(captures, |c| Some(c.raw_path.as_str()));
    if captures.iter().any(|c| c.scene_id.is_some()) {
        uf.link_by(captures, |c| c.scene_id.as_deref());
        group_keys.push("scene_id".to_string());
    }
    if captures.iter().any(|c| c.session_id.is_some()) {
        uf.link_by(captures, |c| c.session_id.as_deref());
        group_keys.push("session_id".to_string());
    }
    let mut groups = uf.groups();
    if let Some(big) = groups.iter().max_by_key(|g| g.len()) {
        if big.len() as f64 > train_limit || groups.len() < 2 {
            return Err(Error::DegenerateSplit {
                group: describe_group(captures, big),
                size: big.len(),
                limit: libm::floor(train_limit) as usize,
            });
        }
    } else {
        return Err(Error::EmptyInput);
    }

    if captures.iter().any(|c| c.device_id.is_some()) {
        let mut with_device = UnionFind { parent: uf.parent.clone() };
        with_device.link_by(captures, |c| c.device_id.as_deref());
        let candidate = with_device.groups();
        let largest = candidate.iter().map(Vec::len).max().unwrap_or(0);
        if candidate.len() >= 2 && largest as f64 <= train_limit {
            groups = candidate;
            group_keys.push("device_id".to_string());
        } else {
            warnings.push("device separation not permitted by metadata; devices may straddle the split".to_string());
        }
    }
    let ungrouped = captures.iter().filter(|c| c.scene_id.is_none() && c.session_id.is_none() && c.device_id.is_none()).count();
    if ungrouped > 0 {
        warnings.push(format!("{ungrouped} captures carry no scene/device/session id; split at capture level"));
    }

    // canonical order, then seeded shuffle
    for g in &mut groups {
        g.sort_by(|&a, &b| captures[a].capture_id.cmp(&captures[b].capture_id));
    }
    groups.sort_by(|a, b| captures[a[0]].capture_id.cmp(&captures[b[0]].capture_id));
    groups.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let target = (libm::round(bench_fraction * n as f64) as usize).clamp(1, n - 1);
    let mut in_bench = alloc::vec![false; groups.len()];
    let mut bench_count = 0;
    for (gi, g) in groups.iter().enumerate() {
        if bench_count + g.len() <= target {
            in_bench[gi] = true;
            bench_count += g.len();
        }
    }
    if bench_count == 0 {
        // every group exceeds the target: hold out the smallest one
        let (gi, _) = groups.iter().enumerate().min_by_key(|(_, g)| g.len()).expect("non-empty");
        in_bench[gi] = true;
        bench_count = groups[gi].len();
    }
    if bench_count != target {
        warnings.push(format!("benchmark holds {bench_count} captures; requested {target}"));
    }

    let mut train_ids = Vec::new();
    let mut bench_ids = Vec::new();
    for (gi, g) in groups.iter().enumerate() {
        let side = if in_bench[gi] { &mut bench_ids } else { &mut train_ids };
        side.extend(g.iter().map(|&i| captures[i].capture_id.clone()));
    }
    train_ids.sort();
    bench_ids.sort();
    Ok(SplitOutcome { train_ids, bench_ids, group_keys, warnings })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Warn,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisjointnessReport {
    pub status: Verdict,
    pub capture_id_overlap: Vec<String>,
    pub raw_path_overlap: Vec<String>,
    pub scene_id_overlap: Vec<String>,
    pub session_id_overlap: Vec<String>,
    pub device_id_overlap: Vec<String>,
    pub train_count: usize,
    pub bench_count: usize,
}

fn overlap<'a>(a: &'a [CaptureRef], b: &'a [CaptureRef], key: impl Fn(&'a CaptureRef) -> Option<&'a str>) -> Vec<String> {
    let left: BTreeSet<&str> = a.iter().filter_map(&key).collect();
    let right: BTreeSet<&str> = b.iter().filter_map(&key).collect();
    left.intersection(&right).map(|s| s.to_string()).collect()
}

/// Intersections over capture id, RAW path, scene, session and device.
/// Shared capture ids, paths, scenes or sessions FAIL; a shared device
/// alone only WARNs, since device separation is conditional.
pub fn verify_disjointness(train: &[CaptureRef], bench: &[CaptureRef]) -> DisjointnessReport {
    let capture_id_overlap = overlap(train, bench, |c| Some(c.capture_id.as_str()));
    let raw_path_overlap = overlap(train, bench, |c| Some(c.raw_path.as_str()));
    let scene_id_overlap = overlap(train, bench, |c| c.scene_id.as_deref());
    let session_id_overlap = overlap(train, bench, |c| c.session_id.as_deref());
    let device_id_overlap = overlap(train, bench, |c| c.device_id.as_deref());
    let status = if !(capture_id_overlap.is_empty() && raw_path_overlap.is_empty() && scene_id_overlap.is_empty() && session_id_overlap.is_empty())
    {
        Verdict::Fail
    } else if !device_id_overlap.is_empty() {
        Verdict::Warn
    } else {
        Verdict::Pass
    };
    DisjointnessReport {
        status,
        capture_id_overlap,
        raw_path_overlap,
        scene_id_overlap,
        session_id_overlap,
        device_id_overlap,
        train_count: train.len(),
        bench_count: bench.len(),
    }
}

/// Resolves a split back to capture references.
pub fn partition_refs(captures: &[CaptureRef], split: &SplitOutcome) -> (Vec<CaptureRef>, Vec<CaptureRef>) {
    let bench: BTreeSet<&str> = split.bench_ids.iter().map(String::as_str).collect();
    captures.iter().cloned().partition(|c| !bench.contains(c.capture_id.as_str()))
}
