//! Annotator and judge clients: plain-HTTP remotes and transcript mocks.

use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use base64::Engine;
use measground_core::bracketsup::{AnnotationRequest, AnnotatorClient, AnnotatorError, CandidatePayload};
use measground_core::text_metrics::{JudgeClient, JudgeError};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::manifest::read_jsonl;
use crate::views::render_ppm;

fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder().timeout_global(Some(timeout)).http_status_as_error(false).build().into()
}

enum Posted {
    Body(String),
    Unavailable(String),
    Rejected(String),
}

fn post(agent: &ureq::Agent, url: &str, body: &impl Serialize) -> Posted {
    match agent.post(url).send_json(body) {
        Ok(mut resp) => {
            let status = resp.status().as_u16();
            let text = resp.body_mut().read_to_string().unwrap_or_default();
            match status {
                200..=299 => Posted::Body(text),
                408 | 429 | 500..=599 => Posted::Unavailable(format!("{url}: HTTP {status}")),
                _ => Posted::Rejected(format!("HTTP {status}: {text}")),
            }
        }
        Err(e) => Posted::Unavailable(format!("{url}: {e}")),
    }
}

#[derive(Debug, Serialize)]
struct AnnotateBody<'a> {
    capture_id: &'a str,
    exposure_gain: f64,
    /// Base64 of a binary PPM.
    image: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotateResponse {
    candidates: Vec<CandidatePayload>,
}

pub struct HttpAnnotator {
    endpoint: String,
    agent: ureq::Agent,
}

impl HttpAnnotator {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> HttpAnnotator {
        HttpAnnotator { endpoint: endpoint.into(), agent: agent(timeout) }
    }
}

impl AnnotatorClient for HttpAnnotator {
    fn annotate(&self, request: &AnnotationRequest<'_>) -> Result<Vec<CandidatePayload>, AnnotatorError> {
        let body = AnnotateBody {
            capture_id: request.capture_id,
            exposure_gain: request.exposure_gain,
            image: base64::engine::general_purpose::STANDARD.encode(render_ppm(request.proxy).encode()),
        };
        match post(&self.agent, &self.endpoint, &body) {
            Posted::Body(text) => serde_json::from_str::<AnnotateResponse>(&text).map(|r| r.candidates).map_err(|_| AnnotatorError::Malformed(text)),
            Posted::Unavailable(msg) => Err(AnnotatorError::Unavailable(msg)),
            Posted::Rejected(msg) => Err(AnnotatorError::Malformed(msg)),
        }
    }
}

#[derive(Debug, Serialize)]
struct JudgeBody<'a> {
    question: &'a str,
    reference: &'a str,
    prediction: &'a str,
}

fn parse_verdict(text: &str) -> Result<bool, JudgeError> {
    #[derive(Deserialize)]
    struct V {
        verdict: String,
    }
    match serde_json::from_str::<V>(text).map(|v| v.verdict) {
        Ok(v) if v == "correct" => Ok(true),
        Ok(v) if v == "incorrect" => Ok(false),
        _ => Err(JudgeError::Malformed(text.into())),
    }
}

pub struct HttpJudge {
    endpoint: String,
    agent: ureq::Agent,
}

impl HttpJudge {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> HttpJudge {
        HttpJudge { endpoint: endpoint.into(), agent: agent(timeout) }
    }
}

impl JudgeClient for HttpJudge {
    fn judge(&self, question: &str, reference: &str, prediction: &str) -> Result<bool, JudgeError> {
        match post(&self.agent, &self.endpoint, &JudgeBody { question, reference, prediction }) {
            Posted::Body(text) => parse_verdict(&text),
            Posted::Unavailable(msg) => Err(JudgeError::Unavailable(msg)),
            Posted::Rejected(msg) => Err(JudgeError::Malformed(msg)),
        }
    }
}

/// One scripted annotator response. Exactly one of `candidates`, `error`
/// (a transient failure) or `malformed` (a raw payload) should be set.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotatorTranscriptEntry {
    pub capture_id: String,
    pub exposure_gain: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<CandidatePayload>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub malformed: Option<String>,
}

type Script<T> = Mutex<HashMap<T, VecDeque<AnnotatorTranscriptEntry>>>;

/// Replays a JSONL transcript keyed by `(capture_id, exposure_gain)`.
/// Entries sharing a key are served in file order; the last one repeats.
pub struct TranscriptAnnotator {
    script: Script<(String, u64)>,
}

impl TranscriptAnnotator {
    pub fn new(entries: Vec<AnnotatorTranscriptEntry>) -> TranscriptAnnotator {
        let mut script: HashMap<(String, u64), VecDeque<_>> = HashMap::new();
        for e in entries {
            script.entry((e.capture_id.clone(), e.exposure_gain.to_bits())).or_default().push_back(e);
        }
        TranscriptAnnotator { script: Mutex::new(script) }
    }

    pub fn load(path: &Path) -> crate::error::Result<TranscriptAnnotator> {
        Ok(TranscriptAnnotator::new(read_jsonl(path)?))
    }
}

impl AnnotatorClient for TranscriptAnnotator {
    fn annotate(&self, request: &AnnotationRequest<'_>) -> Result<Vec<CandidatePayload>, AnnotatorError> {
        let mut script = self.script.lock().expect("transcript lock");
        let key = (request.capture_id.to_string(), request.exposure_gain.to_bits());
        let Some(queue) = script.get_mut(&key) else {
            return Err(AnnotatorError::Unavailable(format!(
                "no transcript entry for {} at gain {}",
                request.capture_id, request.exposure_gain
            )));
        };
        let entry = if queue.len() > 1 { queue.pop_front().expect("non-empty") } else { queue[0].clone() };
        if let Some(msg) = entry.error {
            return Err(AnnotatorError::Unavailable(msg));
        }
        if let Some(payload) = entry.malformed {
            return Err(AnnotatorError::Malformed(payload));
        }
        Ok(entry.candidates.unwrap_or_default())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JudgeTranscriptEntry {
    pub question: String,
    pub reference: String,
    pub prediction: String,
    /// `"correct"`, `"incorrect"`, or anything else to script a malformed verdict.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Replays judge verdicts keyed by `(question, reference, prediction)`.
pub struct TranscriptJudge {
    script: Mutex<HashMap<(String, String, String), VecDeque<JudgeTranscriptEntry>>>,
}

impl TranscriptJudge {
    pub fn new(entries: Vec<JudgeTranscriptEntry>) -> TranscriptJudge {
        let mut script: HashMap<_, VecDeque<_>> = HashMap::new();
        for e in entries {
            script.entry((e.question.clone(), e.reference.clone(), e.prediction.clone())).or_default().push_back(e);
        }
        TranscriptJudge { script: Mutex::new(script) }
    }

    pub fn load(path: &Path) -> crate::error::Result<TranscriptJudge> {
        Ok(TranscriptJudge::new(read_jsonl(path)?))
    }
}

impl JudgeClient for TranscriptJudge {
    fn judge(&self, question: &str, reference: &str, prediction: &str) -> Result<bool, JudgeError> {
        let mut script = self.script.lock().expect("transcript lock");
        let key = (question.to_string(), reference.to_string(), prediction.to_string());
        let Some(queue) = script.get_mut(&key) else {
            return Err(JudgeError::Unavailable(format!("no transcript entry for question {question:?}")));
        };
        let entry = if queue.len() > 1 { queue.pop_front().expect("non-empty") } else { queue[0].clone() };
        if let Some(msg) = entry.error {
            return Err(JudgeError::Unavailable(msg));
        }
        let verdict = entry.verdict.unwrap_or_default();
        parse_verdict(&serde_json::json!({ "verdict": verdict }).to_string())
    }
}
