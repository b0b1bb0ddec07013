//! Deterministic offline annotator.
//!
//! Produces a fixed set of questions about a proxy render, answered from
//! simple image statistics. Answers that depend on clipping or brightness
//! change across the bracket, so aggregation sees both agreement and
//! disagreement.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::bracketsup::{AnnotationRequest, AnnotatorClient, AnnotatorError, CandidatePayload};

/// Encoded level at or above which a pixel counts as part of a bright region.
const BRIGHT_LEVEL: f64 = 0.5;
/// Regions smaller than this are ignored.
const MIN_REGION: usize = 4;

#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicAnnotator;

fn mean_level(p: &[f64; 3]) -> f64 {
    (p[0] + p[1] + p[2]) / 3.0
}

/// 4-connected regions of `mask` with at least `min_size` pixels.
pub fn count_regions(mask: &[bool], width: usize, height: usize, min_size: usize) -> usize {
    let mut seen = vec![false; mask.len()];
    let mut stack = Vec::new();
    let mut regions = 0;
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut size = 0;
        while let Some(i) = stack.pop() {
            size += 1;
            let (x, y) = (i % width, i / width);
            let mut visit = |j: usize| {
                if mask[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < width {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - width);
            }
            if y + 1 < height {
                visit(i + width);
            }
        }
        if size >= min_size {
            regions += 1;
        }
    }
    regions
}

fn location_name(cx: f64, cy: f64, width: usize, height: usize) -> &'static str {
    let col = ((cx / width as f64) * 3.0) as usize;
    let row = ((cy / height as f64) * 3.0) as usize;
    const NAMES: [[&str; 3]; 3] = [
        ["top left", "top", "top right"],
        ["left", "center", "right"],
        ["bottom left", "bottom", "bottom right"],
    ];
    NAMES[row.min(2)][col.min(2)]
}

impl AnnotatorClient for HeuristicAnnotator {
    fn annotate(&self, request: &AnnotationRequest<'_>) -> Result<Vec<CandidatePayload>, AnnotatorError> {
        let proxy = request.proxy;
        let enc = proxy.encoded();
        if enc.is_empty() {
            return Ok(Vec::new());
        }
        let (w, h) = (proxy.width, proxy.height);
        let n = enc.len() as f64;
        let levels: Vec<f64> = enc.iter().map(mean_level).collect();
        let clipped = enc.iter().filter(|p| p.iter().any(|&v| v >= 1.0)).count() as f64 / n;
        let mean = levels.iter().sum::<f64>() / n;
        let bright: Vec<bool> = levels.iter().map(|&l| l >= BRIGHT_LEVEL).collect();
        let regions = count_regions(&bright, w, h, MIN_REGION);
        let peak = levels.iter().copied().fold(0.0, f64::max);
        let (mut sx, mut sy, mut k) = (0.0, 0.0, 0.0);
        for (i, &l) in levels.iter().enumerate() {
            if l >= peak - 1e-9 {
                sx += (i % w) as f64 + 0.5;
                sy += (i / w) as f64 + 0.5;
                k += 1.0;
            }
        }
        let location = location_name(sx / k, sy / k, w, h);
        let brightness = match mean {
            m if m < 0.2 => "dark",
            m if m < 0.4 => "dim",
            m if m < 0.7 => "moderate",
            _ => "bright",
        };

        // annotators read well-exposed proxies best
        let base = (0.9 - 0.15 * libm::fabs(libm::log2(request.exposure_gain))).clamp(0.2, 1.0);
        let payload = |q: &str, a: String, score: f64, qt: &str, tpl: &str| CandidatePayload {
            question: q.into(),
            answer: a,
            score: score.clamp(0.0, 1.0),
            question_type: qt.into(),
            template_id: tpl.into(),
        };
        Ok(vec![
            payload(
                "Is any part of the scene overexposed?",
                String::from(if clipped > 0.001 { "yes" } else { "no" }),
                base,
                "verification",
                "overexposure",
            ),
            payload("How many bright regions are visible?", format!("{regions}"), base - 0.05, "counting", "bright_regions"),
            payload("Where is the brightest region?", String::from(location), base - 0.1, "spatial", "brightest_location"),
            payload("How bright is the scene overall?", String::from(brightness), base - 0.3, "attribute", "brightness"),
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bracketsup::{aggregate, annotate};
    use crate::capture::{synth_capture, SyntheticSceneSpec, TextPatch};
    use crate::isp::{make_bracket, RenderParams, DEFAULT_BRACKET};
    use crate::meas_xyz::meas_xyz_transform;

    #[test]
    fn regions() {
        let mask = [true, true, false, true, true, false, false, false, true];
        assert_eq!(count_regions(&mask, 3, 3, 1), 2);
        assert_eq!(count_regions(&mask, 3, 3, 2), 1);
    }

    #[test]
    fn bracket_annotation_is_deterministic_and_aggregates() {
        let spec = SyntheticSceneSpec {
            patches: vec![
                TextPatch { x: 4, y: 4, width: 8, height: 4, multiplier: 6.0 },
                TextPatch { x: 40, y: 40, width: 8, height: 4, multiplier: 6.0 },
            ],
            ..Default::default()
        };
        let z = meas_xyz_transform(&synth_capture(&spec, 0).unwrap().capture).unwrap();
        let bracket = make_bracket(&z, &RenderParams::default(), &DEFAULT_BRACKET).unwrap();
        let mut all = Vec::new();
        for proxy in &bracket {
            let a = annotate(proxy, "SYN", &HeuristicAnnotator, 0).unwrap();
            let b = annotate(proxy, "SYN", &HeuristicAnnotator, 0).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.candidates.len(), 4);
            all.extend(a.candidates);
        }
        let records = aggregate(&all).unwrap();
        assert_eq!(records.len(), 4);
        let count = records.iter().find(|r| r.template_id == "bright_regions").unwrap();
        assert_eq!(count.answer, "2");
        assert_eq!(count.provenance, DEFAULT_BRACKET.to_vec());
    }
}
