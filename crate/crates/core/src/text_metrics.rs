//! BLEU-4, ROUGE-L, judge clients and per-dimension run evaluation.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::benchmark::{BenchmarkExample, CapabilityDimension};
use crate::text::collapse_lower;
use crate::{Error, Result};

pub const MAX_NGRAM: usize = 4;

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF      // kana
        | 0x3400..=0x4DBF    // CJK ext A
        | 0x4E00..=0x9FFF    // CJK unified
        | 0xAC00..=0xD7AF    // hangul
        | 0xF900..=0xFAFF    // compatibility ideographs
        | 0x20000..=0x2FA1F)
}

/// Lowercases and splits on whitespace and punctuation; punctuation is
/// dropped and every CJK code point becomes its own token.
pub fn tokenize(s: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut cur = String::new();
    for c in collapse_lower(s).chars() {
        if is_cjk(c) {
            if !cur.is_empty() {
                tokens.push(core::mem::take(&mut cur));
            }
            tokens.push(String::from(c));
        } else if c.is_alphanumeric() {
            cur.push(c);
        } else if !cur.is_empty() {
            tokens.push(core::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        tokens.push(cur);
    }
    tokens
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> BTreeMap<Vec<&str>, usize> {
    let mut m = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    m
}

/// Sentence BLEU-4 against one or more references.
///
/// Modified n-gram precisions for n = 1..4 are combined by geometric mean.
/// A zero match count for n ≥ 2 is smoothed to `1 / (total + 1)`; a zero
/// unigram precision gives 0. The brevity penalty uses the reference length
/// closest to the candidate (shorter on ties). An empty candidate scores 0.
pub fn bleu<S: AsRef<str>>(candidate: &[S], references: &[Vec<S>]) -> Result<f64> {
    if references.is_empty() {
        return Err(Error::InvalidArgument("bleu needs at least one reference".into()));
    }
    if candidate.is_empty() {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 1..=MAX_NGRAM {
        let cand = ngram_counts(candidate, n);
        let mut max_ref: BTreeMap<Vec<&str>, usize> = BTreeMap::new();
        for r in references {
            for (g, c) in ngram_counts(r, n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
        let total: usize = cand.values().sum();
        let matched: usize = cand.iter().map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0))).sum();
        let p = if matched > 0 {
            matched as f64 / total as f64
        } else if n == 1 {
            return Ok(0.0);
        } else {
            1.0 / (total as f64 + 1.0)
        };
        log_sum += libm::log(p);
    }
    let c = candidate.len() as f64;
    let r = references
        .iter()
        .map(|r| r.len())
        .min_by_key(|&len| (len.abs_diff(candidate.len()), len))
        .expect("non-empty") as f64;
    let bp = if c > r { 1.0 } else { libm::exp(1.0 - r / c) };
    Ok((bp * libm::exp(log_sum / MAX_NGRAM as f64)).clamp(0.0, 1.0))
}

/// Longest common subsequence length, O(|a|·|b|).
pub fn lcs_len<S: PartialEq>(a: &[S], b: &[S]) -> usize {
    let mut prev = alloc::vec![0usize; b.len() + 1];
    let mut cur = alloc::vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS F-measure with β = 1. An empty candidate scores 0.
pub fn rouge_l<S: PartialEq>(candidate: &[S], reference: &[S]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::InvalidArgument("rouge_l needs a non-empty reference".into()));
    }
    if candidate.is_empty() {
        return Ok(0.0);
    }
    let l = lcs_len(candidate, reference);
    if l == 0 {
        return Ok(0.0);
    }
    let p = l as f64 / candidate.len() as f64;
    let r = l as f64 / reference.len() as f64;
    Ok(2.0 * p * r / (p + r))
}

#[derive(Debug, Clone, PartialEq)]
pub enum JudgeError {
    Unavailable(String),
    Malformed(String),
}

pub trait JudgeClient {
    fn judge(&self, question: &str, reference: &str, prediction: &str) -> core::result::Result<bool, JudgeError>;
}

impl<T: JudgeClient + ?Sized> JudgeClient for &T {
    fn judge(&self, question: &str, reference: &str, prediction: &str) -> core::result::Result<bool, JudgeError> {
        (**self).judge(question, reference, prediction)
    }
}

/// Offline judge: correct iff prediction and reference agree after
/// lowercasing and whitespace collapsing.
#[derive(Debug, Clone, Copy, Default)]
pub struct NormalizedMatchJudge;

impl JudgeClient for NormalizedMatchJudge {
    fn judge(&self, _question: &str, reference: &str, prediction: &str) -> core::result::Result<bool, JudgeError> {
        Ok(collapse_lower(reference) == collapse_lower(prediction))
    }
}

/// Asks the judge, retrying transient failures up to `max_retries` times.
pub fn judge(question: &str, reference: &str, prediction: &str, client: &impl JudgeClient, max_retries: u32) -> Result<bool> {
    let mut attempts = 0;
    loop {
        match client.judge(question, reference, prediction) {
            Ok(v) => return Ok(v),
            Err(JudgeError::Unavailable(msg)) => {
                if attempts >= max_retries {
                    return Err(Error::JudgeUnavailable(msg));
                }
                attempts += 1;
            }
            Err(JudgeError::Malformed(msg)) => return Err(Error::MalformedVerdict(msg)),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricTriple {
    pub bleu: f64,
    pub rouge_l: f64,
    /// Fraction in `[0, 1]`; rendered as a percentage.
    pub judge_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub overall: MetricTriple,
    pub per_dimension: BTreeMap<CapabilityDimension, MetricTriple>,
    pub counts: BTreeMap<CapabilityDimension, usize>,
    pub total: usize,
    /// `capture_id\tquestion` of examples without a prediction.
    pub missing_predictions: Vec<String>,
}

/// Per-example scores, exposed so callers can audit aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleScore {
    pub capture_id: String,
    pub question: String,
    pub dimension: CapabilityDimension,
    pub bleu: f64,
    pub rouge_l: f64,
    pub correct: bool,
}

/// Predictions keyed by `(capture_id, question)`.
pub type Predictions = BTreeMap<(String, String), String>;

pub fn score_example(ex: &BenchmarkExample, prediction: &str, client: &impl JudgeClient, max_retries: u32) -> Result<ExampleScore> {
    let cand = tokenize(prediction);
    let reference = tokenize(&ex.reference_answer);
    let (b, r) = if reference.is_empty() {
        (0.0, 0.0)
    } else {
        (bleu(&cand, core::slice::from_ref(&reference))?, rouge_l(&cand, &reference)?)
    };
    let correct = judge(&ex.question, &ex.reference_answer, prediction, client, max_retries)?;
    Ok(ExampleScore {
        capture_id: ex.capture_id.clone(),
        question: ex.question.clone(),
        dimension: ex.dimension,
        bleu: b,
        rouge_l: r,
        correct,
    })
}

/// Means of the per-example scores, overall and per dimension.
pub fn summarize(scores: &[ExampleScore], missing: Vec<String>) -> MetricReport {
    fn mean(items: &[&ExampleScore]) -> MetricTriple {
        if items.is_empty() {
            return MetricTriple::default();
        }
        let n = items.len() as f64;
        MetricTriple {
            bleu: items.iter().map(|s| s.bleu).sum::<f64>() / n,
            rouge_l: items.iter().map(|s| s.rouge_l).sum::<f64>() / n,
            judge_accuracy: items.iter().filter(|s| s.correct).count() as f64 / n,
        }
    }
    let mut sorted: Vec<&ExampleScore> = scores.iter().collect();
    sorted.sort_by(|a, b| (&a.capture_id, &a.question).cmp(&(&b.capture_id, &b.question)));
    let mut by_dim: BTreeMap<CapabilityDimension, Vec<&ExampleScore>> = BTreeMap::new();
    for s in &sorted {
        by_dim.entry(s.dimension).or_default().push(s);
    }
    MetricReport {
        overall: mean(&sorted),
        counts: by_dim.iter().map(|(d, v)| (*d, v.len())).collect(),
        per_dimension: by_dim.iter().map(|(d, v)| (*d, mean(v))).collect(),
        total: sorted.len(),
        missing_predictions: missing,
    }
}

/// Scores every benchmark example. Missing predictions count as empty
/// strings and are listed; predictions for unknown examples are an error.
pub fn evaluate_run(predictions: &Predictions, manifest: &[BenchmarkExample], client: &impl JudgeClient, max_retries: u32) -> Result<MetricReport> {
    for (cid, q) in predictions.keys() {
        if !manifest.iter().any(|e| &e.capture_id == cid && &e.question == q) {
            return Err(Error::ManifestMismatch(format!("prediction for unknown example ({cid}, {q})")));
        }
    }
    let mut missing = Vec::new();
    let mut scores = Vec::with_capacity(manifest.len());
    for ex in manifest {
        let pred = match predictions.get(&(ex.capture_id.clone(), ex.question.clone())) {
            Some(p) => p.as_str(),
            None => {
                missing.push(format!("{}\t{}", ex.capture_id, ex.question));
                ""
            }
        };
        scores.push(score_example(ex, pred, client, max_retries)?);
    }
    missing.sort();
    Ok(summarize(&scores, missing))
}

impl MetricReport {
    /// Aligned text table: one row per capability dimension present, then
    /// the overall row. Judge accuracy is shown as a percentage.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<36} {:>6} {:>8} {:>8} {:>8}", "Dimension", "N", "BLEU", "ROUGE-L", "Judge%");
        for d in CapabilityDimension::ALL {
            if let Some(m) = self.per_dimension.get(&d) {
                let label = format!("{} ({})", d.full_name(), d.abbrev());
                let _ = writeln!(
                    out,
                    "{:<36} {:>6} {:>8.4} {:>8.4} {:>8.2}",
                    label,
                    self.counts.get(&d).copied().unwrap_or(0),
                    m.bleu,
                    m.rouge_l,
                    m.judge_accuracy * 100.0
                );
            }
        }
        let _ = writeln!(
            out,
            "{:<36} {:>6} {:>8.4} {:>8.4} {:>8.2}",
            "Overall",
            self.total,
            self.overall.bleu,
            self.overall.rouge_l,
            self.overall.judge_accuracy * 100.0
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn tokenizer() {
        assert_eq!(toks("The cat, sat."), vec!["the", "cat", "sat"]);
        assert_eq!(toks("出口 EXIT"), vec!["出", "口", "exit"]);
        assert_eq!(toks("  "), Vec::<String>::new());
        assert_eq!(toks("don't"), vec!["don", "t"]);
    }

    #[test]
    fn bleu_examples() {
        let c = toks("the cat sat on the mat");
        assert_eq!(bleu(&c, core::slice::from_ref(&c)).unwrap(), 1.0);
        assert_eq!(bleu(&toks("dog"), &[toks("the cat")]).unwrap(), 0.0);
        // precisions 1, 1, 1 and a smoothed empty 4-gram set (1/1); BP = exp(1 - 4/3)
        let v = bleu(&toks("the cat sat"), &[toks("the cat sat down")]).unwrap();
        assert!((v - libm::exp(1.0 - 4.0 / 3.0)).abs() < 1e-12);
        assert_eq!(bleu(&Vec::<String>::new(), &[toks("a")]).unwrap(), 0.0);
        assert!(bleu(&toks("a"), &[] as &[Vec<String>]).is_err());
    }

    #[test]
    fn rouge_examples() {
        assert_eq!(rouge_l(&toks("a b c"), &toks("a b c")).unwrap(), 1.0);
        assert_eq!(rouge_l(&toks("a b"), &toks("c d")).unwrap(), 0.0);
        let v = rouge_l(&toks("a b c d"), &toks("a c d")).unwrap();
        assert!((v - 6.0 / 7.0).abs() < 1e-15);
        assert_eq!(rouge_l(&Vec::<String>::new(), &toks("a")).unwrap(), 0.0);
        assert!(rouge_l(&toks("a"), &Vec::<String>::new()).is_err());
    }

    #[test]
    fn mock_judge() {
        let j = NormalizedMatchJudge;
        assert!(judge("q", "Red  Car", "red car", &j, 0).unwrap());
        assert!(!judge("q", "red", "blue", &j, 0).unwrap());
    }
}
