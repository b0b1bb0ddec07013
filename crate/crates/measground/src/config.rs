//! Run configuration: a JSON file plus command-line overrides.

use std::path::{Path, PathBuf};

use measground_core::dataset::{BalanceCaps, DEFAULT_PLACEHOLDERS, DEFAULT_SCORE_FLOOR};
use measground_core::isp::{RenderParams, DEFAULT_BRACKET};
use measground_core::lost_signal::{DEFAULT_BINS, DEFAULT_TAU};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Value of `mock_annotator` selecting the built-in heuristic annotator.
pub const HEURISTIC_ANNOTATOR: &str = "heuristic";
/// Value of `mock_judge` selecting the normalized exact-match judge.
pub const EXACT_MATCH_JUDGE: &str = "exact";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CapsConfig {
    pub per_source: Option<usize>,
    pub per_type: Option<usize>,
    pub per_template: Option<usize>,
}

impl CapsConfig {
    pub fn resolve(&self) -> BalanceCaps {
        BalanceCaps {
            per_source: self.per_source.unwrap_or(usize::MAX),
            per_type: self.per_type.unwrap_or(usize::MAX),
            per_template: self.per_template.unwrap_or(usize::MAX),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub count: usize,
    pub width: usize,
    pub height: usize,
    /// A single scene description to draw instead of a random corpus.
    pub spec: Option<PathBuf>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { count: 50, width: 64, height: 64, spec: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Default input for stages that read from outside the output root.
    pub input: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub render: RenderParams,
    pub exposures: Vec<f64>,
    pub score_floor: f64,
    pub placeholders: Vec<String>,
    pub caps: CapsConfig,
    pub target_size: usize,
    pub split_fraction: f64,
    pub annotator_endpoint: Option<String>,
    /// Transcript path, or `"heuristic"`.
    pub mock_annotator: Option<String>,
    pub judge_endpoint: Option<String>,
    /// Transcript path, or `"exact"`.
    pub mock_judge: Option<String>,
    pub max_retries: u32,
    pub timeout_secs: u64,
    pub tau: f64,
    pub bins: usize,
    pub probe_config: Option<PathBuf>,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: None,
            out: PathBuf::from("out"),
            seed: 0,
            render: RenderParams::default(),
            exposures: DEFAULT_BRACKET.to_vec(),
            score_floor: DEFAULT_SCORE_FLOOR,
            placeholders: DEFAULT_PLACEHOLDERS.iter().map(|s| s.to_string()).collect(),
            caps: CapsConfig::default(),
            target_size: 150_000,
            split_fraction: 0.2,
            annotator_endpoint: None,
            mock_annotator: None,
            judge_endpoint: None,
            mock_judge: None,
            max_retries: 2,
            timeout_secs: 60,
            tau: DEFAULT_TAU,
            bins: DEFAULT_BINS,
            probe_config: None,
            synth: SynthConfig::default(),
        }
    }
}

fn invalid(field: &str, msg: impl std::fmt::Display) -> Error {
    Error::ConfigInvalid(format!("{field}: {msg}"))
}

fn check_path(field: &str, p: &Path) -> Result<()> {
    if p.exists() {
        Ok(())
    } else {
        Err(invalid(field, format!("{} does not exist", p.display())))
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::ConfigInvalid(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.render.validate().map_err(|e| invalid("render", e))?;
        if self.exposures.is_empty() {
            return Err(invalid("exposures", "must not be empty"));
        }
        if let Some(e) = self.exposures.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
            return Err(invalid("exposures", format!("gain {e} must be finite and positive")));
        }
        if !(0.0..=1.0).contains(&self.score_floor) {
            return Err(invalid("score_floor", format!("{} is outside [0, 1]", self.score_floor)));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(invalid("split_fraction", format!("{} is outside (0, 1)", self.split_fraction)));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(invalid("tau", format!("{} must be positive", self.tau)));
        }
        if self.bins < 2 {
            return Err(invalid("bins", "must be at least 2"));
        }
        if self.timeout_secs == 0 {
            return Err(invalid("timeout_secs", "must be positive"));
        }
        if self.synth.width < 2 || self.synth.height < 2 || !self.synth.width.is_multiple_of(2) || !self.synth.height.is_multiple_of(2) {
            return Err(invalid("synth", "width and height must be even and at least 2"));
        }
        if let Some(p) = &self.mock_annotator {
            if p != HEURISTIC_ANNOTATOR {
                check_path("mock_annotator", Path::new(p))?;
            }
        }
        if let Some(p) = &self.mock_judge {
            if p != EXACT_MATCH_JUDGE {
                check_path("mock_judge", Path::new(p))?;
            }
        }
        if let Some(p) = &self.probe_config {
            check_path("probe_config", p)?;
        }
        if let Some(p) = &self.synth.spec {
            check_path("synth.spec", p)?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}
