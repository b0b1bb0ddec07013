//! Exposure-bracketed supervision: annotate every proxy of a bracket, then
//! fold the candidates into one instruction record per question.
//!
//! Aggregation rules, applied per group of candidates sharing a normalized
//! question key:
//!
//! 1. An answer produced by at least two distinct exposures gets `+0.1`
//!    on each of its candidates' scores, capped at 1.
//! 2. The winner is the highest boosted score; ties go to the exposure
//!    closest to 1.0, then the lexicographically smaller answer.
//! 3. Provenance is every exposure that contributed to the group.
//!
//! Output is sorted by descending score, then question key.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::capture::{CameraMetadata, RawCapture};
use crate::isp::RenderedRgb;
use crate::text::{answer_key, question_key};
use crate::{Error, Result};

pub const AGREEMENT_BOOST: f64 = 0.1;

/// Candidate as returned by an annotator, before validation and stamping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePayload {
    pub question: String,
    pub answer: String,
    pub score: f64,
    #[serde(default)]
    pub question_type: String,
    #[serde(default)]
    pub template_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateRecord {
    pub question: String,
    pub answer: String,
    pub score: f64,
    /// Gain of the proxy that produced this candidate.
    pub exposure_gain: f64,
    pub question_type: String,
    pub template_id: String,
    pub source_prefix: String,
    /// Exposures already folded into this candidate by an earlier
    /// aggregation. Empty for fresh annotator output.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub merged_exposures: Vec<f64>,
}

impl CandidateRecord {
    pub fn validate(&self) -> Result<()> {
        if self.question.trim().is_empty() || self.answer.trim().is_empty() {
            return Err(Error::InvalidArgument("candidate question and answer must be non-empty".into()));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::InvalidArgument(alloc::format!("candidate score {} outside [0, 1]", self.score)));
        }
        if !(self.exposure_gain.is_finite() && self.exposure_gain > 0.0) {
            return Err(Error::InvalidArgument("candidate exposure_gain must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstructionRecord {
    pub question: String,
    pub answer: String,
    pub score: f64,
    pub question_type: String,
    pub template_id: String,
    pub source_prefix: String,
    /// Exposure of the winning candidate.
    pub exposure_gain: f64,
    /// Every exposure that contributed to the question group, ascending.
    pub provenance: Vec<f64>,
}

impl InstructionRecord {
    /// The record as a single candidate carrying its provenance, so that
    /// re-aggregation reproduces it.
    pub fn to_candidate(&self) -> CandidateRecord {
        CandidateRecord {
            question: self.question.clone(),
            answer: self.answer.clone(),
            score: self.score,
            exposure_gain: self.exposure_gain,
            question_type: self.question_type.clone(),
            template_id: self.template_id.clone(),
            source_prefix: self.source_prefix.clone(),
            merged_exposures: self.provenance.clone(),
        }
    }
}

/// Supervision attached to the measurement-domain view of a capture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSample {
    pub capture_id: String,
    pub meas_xyz_path: String,
    pub raw_path: String,
    pub record: InstructionRecord,
    pub metadata: CameraMetadata,
}

/// Request handed to an annotator: one proxy of one capture.
#[derive(Debug, Clone, Copy)]
pub struct AnnotationRequest<'a> {
    pub capture_id: &'a str,
    pub exposure_gain: f64,
    pub proxy: &'a RenderedRgb,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnnotatorError {
    /// Transient; the call may be retried.
    Unavailable(String),
    /// The response violated the wire schema; carries the offending payload.
    Malformed(String),
}

/// Anything that turns a proxy image into candidate question/answer pairs.
pub trait AnnotatorClient {
    fn annotate(&self, request: &AnnotationRequest<'_>) -> core::result::Result<Vec<CandidatePayload>, AnnotatorError>;
}

impl<T: AnnotatorClient + ?Sized> AnnotatorClient for &T {
    fn annotate(&self, request: &AnnotationRequest<'_>) -> core::result::Result<Vec<CandidatePayload>, AnnotatorError> {
        (**self).annotate(request)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnnotateOutcome {
    pub candidates: Vec<CandidateRecord>,
    pub retries: u32,
    /// Index into the client response and the reason it was dropped.
    pub dropped: Vec<(usize, String)>,
    /// Payload of a response that failed schema validation; it was skipped.
    pub malformed: Option<String>,
}

/// Calls the annotator for one proxy, retrying transient failures up to
/// `max_retries` times. Candidates violating the record invariants are
/// dropped; a malformed response yields no candidates.
pub fn annotate(
    proxy: &RenderedRgb,
    source_prefix: &str,
    client: &impl AnnotatorClient,
    max_retries: u32,
) -> Result<AnnotateOutcome> {
    let request = AnnotationRequest {
        capture_id: &proxy.capture_id,
        exposure_gain: proxy.params.exposure_gain,
        proxy,
    };
    let mut outcome = AnnotateOutcome::default();
    let payloads = loop {
        match client.annotate(&request) {
            Ok(p) => break p,
            Err(AnnotatorError::Unavailable(msg)) => {
                if outcome.retries >= max_retries {
                    return Err(Error::AnnotatorUnavailable(msg));
                }
                outcome.retries += 1;
            }
            Err(AnnotatorError::Malformed(payload)) => {
                outcome.malformed = Some(payload);
                return Ok(outcome);
            }
        }
    };
    for (i, p) in payloads.into_iter().enumerate() {
        let record = CandidateRecord {
            question: p.question,
            answer: p.answer,
            score: p.score,
            exposure_gain: request.exposure_gain,
            question_type: p.question_type,
            template_id: p.template_id,
            source_prefix: source_prefix.into(),
            merged_exposures: Vec::new(),
        };
        match record.validate() {
            Ok(()) => outcome.candidates.push(record),
            Err(e) => outcome.dropped.push((i, alloc::format!("{e}"))),
        }
    }
    Ok(outcome)
}

fn sorted_exposures(it: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = it.into_iter().collect();
    v.sort_by(f64::total_cmp);
    v.dedup_by(|a, b| a.total_cmp(b) == Ordering::Equal);
    v
}

/// Total order used to pick a group's winner: smaller is better.
fn winner_order(a: &(f64, &CandidateRecord), b: &(f64, &CandidateRecord)) -> Ordering {
    let dist = |c: &CandidateRecord| libm::fabs(c.exposure_gain - 1.0);
    b.0.total_cmp(&a.0)
        .then_with(|| dist(a.1).total_cmp(&dist(b.1)))
        .then_with(|| a.1.answer.cmp(&b.1.answer))
        .then_with(|| a.1.exposure_gain.total_cmp(&b.1.exposure_gain))
        .then_with(|| a.1.question.cmp(&b.1.question))
        .then_with(|| a.1.question_type.cmp(&b.1.question_type))
        .then_with(|| a.1.template_id.cmp(&b.1.template_id))
        .then_with(|| a.1.source_prefix.cmp(&b.1.source_prefix))
}

/// Folds candidates into one record per normalized question.
pub fn aggregate(candidates: &[CandidateRecord]) -> Result<Vec<InstructionRecord>> {
    if candidates.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut groups: BTreeMap<String, Vec<&CandidateRecord>> = BTreeMap::new();
    for c in candidates {
        groups.entry(question_key(&c.question)).or_default().push(c);
    }
    let mut out: Vec<(String, InstructionRecord)> = Vec::with_capacity(groups.len());
    for (key, group) in groups {
        // distinct exposures behind each normalized answer
        let mut support: BTreeMap<String, BTreeSet<u64>> = BTreeMap::new();
        for c in &group {
            support.entry(answer_key(&c.answer)).or_default().insert(c.exposure_gain.to_bits());
        }
        let winner = group
            .iter()
            .map(|c| {
                let agreeing = support[&answer_key(&c.answer)].len() >= 2;
                let score = if agreeing { (c.score + AGREEMENT_BOOST).min(1.0) } else { c.score };
                (score, *c)
            })
            .min_by(winner_order)
            .expect("groups are non-empty");
        let provenance =
            sorted_exposures(group.iter().flat_map(|c| core::iter::once(c.exposure_gain).chain(c.merged_exposures.iter().copied())));
        let (score, c) = winner;
        out.push((
            key,
            InstructionRecord {
                question: c.question.clone(),
                answer: c.answer.clone(),
                score,
                question_type: c.question_type.clone(),
                template_id: c.template_id.clone(),
                source_prefix: c.source_prefix.clone(),
                exposure_gain: c.exposure_gain,
                provenance,
            },
        ));
    }
    out.sort_by(|a, b| b.1.score.total_cmp(&a.1.score).then_with(|| a.0.cmp(&b.0)));
    Ok(out.into_iter().map(|(_, r)| r).collect())
}

/// Where a capture's measurement-domain view lives.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSource {
    pub capture_id: String,
    pub meas_xyz_path: String,
    pub raw_path: String,
    pub metadata: CameraMetadata,
}

impl SampleSource {
    pub fn from_capture(capture: &RawCapture, meas_xyz_path: impl Into<String>) -> SampleSource {
        SampleSource {
            capture_id: capture.capture_id.clone(),
            meas_xyz_path: meas_xyz_path.into(),
            raw_path: capture.raw_path.clone(),
            metadata: capture.metadata.clone(),
        }
    }
}

/// One sample per record, all pointing at the capture's measurement view.
pub fn build_samples(source: &SampleSource, records: &[InstructionRecord]) -> Vec<TrainingSample> {
    records
        .iter()
        .map(|r| TrainingSample {
            capture_id: source.capture_id.clone(),
            meas_xyz_path: source.meas_xyz_path.clone(),
            raw_path: source.raw_path.clone(),
            record: r.clone(),
            metadata: source.metadata.clone(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isp::{RenderParams, RenderedPixels};
    use alloc::vec;
    use core::cell::Cell;

    pub(crate) fn cand(q: &str, a: &str, score: f64, e: f64) -> CandidateRecord {
        CandidateRecord {
            question: q.into(),
            answer: a.into(),
            score,
            exposure_gain: e,
            question_type: "t".into(),
            template_id: "tpl".into(),
            source_prefix: "SRC".into(),
            merged_exposures: vec![],
        }
    }

    fn proxy(e: f64) -> RenderedRgb {
        RenderedRgb {
            capture_id: "cap-1".into(),
            width: 1,
            height: 1,
            params: RenderParams::default().with_gain(e),
            pixels: RenderedPixels::Codes(vec![[0; 3]]),
        }
    }

    struct Scripted {
        failures: Cell<u32>,
        response: Vec<CandidatePayload>,
    }

    impl AnnotatorClient for Scripted {
        fn annotate(&self, _: &AnnotationRequest<'_>) -> core::result::Result<Vec<CandidatePayload>, AnnotatorError> {
            if self.failures.get() > 0 {
                self.failures.set(self.failures.get() - 1);
                return Err(AnnotatorError::Unavailable("timeout".into()));
            }
            Ok(self.response.clone())
        }
    }

    fn payload(q: &str, a: &str, s: f64) -> CandidatePayload {
        CandidatePayload { question: q.into(), answer: a.into(), score: s, question_type: "t".into(), template_id: "x".into() }
    }

    #[test]
    fn singleton_is_identity() {
        let c = cand("What color?", "red", 0.6, 2.0);
        let out = aggregate(core::slice::from_ref(&c)).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].answer, "red");
        assert_eq!(out[0].score, 0.6);
        assert_eq!(out[0].provenance, vec![2.0]);
    }

    #[test]
    fn cross_exposure_agreement_boosts() {
        let out = aggregate(&[cand("What color?", "Red", 0.6, 0.5), cand("what  color", "red", 0.7, 2.0)]).unwrap();
        assert_eq!(out.len(), 1);
        assert!((out[0].score - 0.8).abs() < 1e-12);
        assert_eq!(out[0].provenance, vec![0.5, 2.0]);
        assert_eq!(out[0].exposure_gain, 2.0);
    }

    #[test]
    fn same_exposure_does_not_boost() {
        let out = aggregate(&[cand("q", "a", 0.6, 1.0), cand("q", "a", 0.7, 1.0)]).unwrap();
        assert_eq!(out[0].score, 0.7);
    }

    #[test]
    fn boost_is_capped() {
        let out = aggregate(&[cand("q", "a", 0.95, 1.0), cand("q", "a", 0.99, 2.0)]).unwrap();
        assert_eq!(out[0].score, 1.0);
    }

    #[test]
    fn ties_prefer_unit_exposure_then_answer() {
        let out = aggregate(&[cand("q", "zebra", 0.5, 4.0), cand("q", "yak", 0.5, 1.0)]).unwrap();
        assert_eq!(out[0].answer, "yak");
        let out = aggregate(&[cand("q", "b", 0.5, 0.5), cand("q", "a", 0.5, 1.5)]).unwrap();
        assert_eq!(out[0].answer, "a");
    }

    #[test]
    fn distinct_questions_do_not_interact() {
        let out = aggregate(&[cand("q1", "a", 0.4, 1.0), cand("q2", "a", 0.9, 2.0)]).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].question, "q2");
        assert_eq!(out[1].score, 0.4);
    }

    #[test]
    fn empty_input() {
        assert_eq!(aggregate(&[]), Err(Error::EmptyInput));
    }

    #[test]
    fn annotate_stamps_and_filters() {
        let client = Scripted {
            failures: Cell::new(0),
            response: vec![payload("Q1", "A1", 0.5), payload("Q2", "  ", 0.9), payload("Q3", "A3", 1.5)],
        };
        let out = annotate(&proxy(2.0), "RAISE", &client, 3).unwrap();
        assert_eq!(out.candidates.len(), 1);
        assert_eq!(out.candidates[0].exposure_gain, 2.0);
        assert_eq!(out.candidates[0].source_prefix, "RAISE");
        assert_eq!(out.dropped.iter().map(|d| d.0).collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn annotate_retries_transient_failures() {
        let client = Scripted { failures: Cell::new(2), response: vec![payload("Q", "A", 0.5)] };
        let out = annotate(&proxy(1.0), "S", &client, 3).unwrap();
        assert_eq!(out.retries, 2);
        assert_eq!(out.candidates.len(), 1);

        let client = Scripted { failures: Cell::new(5), response: vec![] };
        assert!(matches!(annotate(&proxy(1.0), "S", &client, 3), Err(Error::AnnotatorUnavailable(_))));
    }

    #[test]
    fn malformed_response_is_skipped() {
        struct Bad;
        impl AnnotatorClient for Bad {
            fn annotate(&self, _: &AnnotationRequest<'_>) -> core::result::Result<Vec<CandidatePayload>, AnnotatorError> {
                Err(AnnotatorError::Malformed("{\"nope\":1}".into()))
            }
        }
        let out = annotate(&proxy(1.0), "S", &Bad, 3).unwrap();
        assert!(out.candidates.is_empty());
        assert_eq!(out.malformed.as_deref(), Some("{\"nope\":1}"));
    }

    #[test]
    fn samples_point_at_measurement_view() {
        let cap = crate::capture::synth_capture(&Default::default(), 0).unwrap().capture;
        let src = SampleSource::from_capture(&cap, "measxyz/synth-0000/meas_xyz.json");
        let recs = aggregate(&[cand("a", "x", 0.5, 1.0), cand("b", "y", 0.5, 1.0), cand("c", "z", 0.5, 1.0)]).unwrap();
        let samples = build_samples(&src, &recs);
        assert_eq!(samples.len(), 3);
        assert!(samples.iter().all(|s| s.meas_xyz_path == "measxyz/synth-0000/meas_xyz.json"));
        assert!(samples.iter().all(|s| s.metadata == cap.metadata));
        assert!(build_samples(&src, &[]).is_empty());
    }
}
