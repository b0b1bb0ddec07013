//! RAW capture model: sensor mosaic, calibration and capture metadata.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::linalg::Mat3;
use crate::{Error, Result};

/// Color filter array layout, named by the top-left 2×2 tile in raster order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CfaPattern {
    Rggb,
    Bggr,
    Grbg,
    Gbrg,
}

/// Channel index of a CFA site: 0 = R, 1 = G, 2 = B.
pub type Channel = usize;

impl CfaPattern {
    pub const ALL: [CfaPattern; 4] = [CfaPattern::Rggb, CfaPattern::Bggr, CfaPattern::Grbg, CfaPattern::Gbrg];

    fn tile(self) -> [Channel; 4] {
        match self {
            CfaPattern::Rggb => [0, 1, 1, 2],
            CfaPattern::Bggr => [2, 1, 1, 0],
            CfaPattern::Grbg => [1, 0, 2, 1],
            CfaPattern::Gbrg => [1, 2, 0, 1],
        }
    }

    /// Color sampled at pixel `(x, y)`.
    #[inline]
    pub fn channel_at(self, x: usize, y: usize) -> Channel {
        self.tile()[site_index(x, y)]
    }

    pub fn name(self) -> &'static str {
        match self {
            CfaPattern::Rggb => "RGGB",
            CfaPattern::Bggr => "BGGR",
            CfaPattern::Grbg => "GRBG",
            CfaPattern::Gbrg => "GBRG",
        }
    }

    pub fn parse(s: &str) -> Option<CfaPattern> {
        CfaPattern::ALL.into_iter().find(|p| p.name() == s)
    }
}

/// Position of `(x, y)` inside its 2×2 tile, raster order. Black levels are
/// indexed the same way.
#[inline]
pub fn site_index(x: usize, y: usize) -> usize {
    (y % 2) * 2 + (x % 2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraMetadata {
    pub iso: f64,
    /// Seconds.
    pub exposure_time: f64,
    /// f-number.
    pub aperture: f64,
    pub device_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
}

impl CameraMetadata {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("iso", self.iso), ("exposure_time", self.exposure_time), ("aperture", self.aperture)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidCapture(format!("metadata.{name} must be finite and positive, got {v}")));
            }
        }
        if self.device_id.is_empty() {
            return Err(Error::InvalidCapture("metadata.device_id is empty".into()));
        }
        Ok(())
    }
}

/// Row-major 16-bit sensor codes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mosaic {
    width: usize,
    height: usize,
    codes: Vec<u16>,
}

impl Mosaic {
    pub fn new(width: usize, height: usize, codes: Vec<u16>) -> Result<Mosaic> {
        if codes.len() != width * height {
            return Err(Error::DimensionMismatch { expected: (height, width), found: (codes.len(), 1) });
        }
        Ok(Mosaic { width, height, codes })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn codes(&self) -> &[u16] {
        &self.codes
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.codes[y * self.width + x]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawCapture {
    pub capture_id: String,
    pub mosaic: Mosaic,
    pub cfa_pattern: CfaPattern,
    /// One level per CFA site, indexed by [`site_index`].
    pub black_level: [f64; 4],
    pub white_level: f64,
    /// R, G, B multipliers, G-normalized.
    pub wb_gains: [f64; 3],
    pub cam_to_xyz: Mat3,
    pub metadata: CameraMetadata,
    pub raw_path: String,
}

impl RawCapture {
    /// Checks every documented invariant. Codes above `white_level` are legal.
    pub fn validate(&self) -> Result<()> {
        let (w, h) = (self.mosaic.width, self.mosaic.height);
        if w == 0 || h == 0 || w % 2 != 0 || h % 2 != 0 {
            return Err(Error::InvalidCapture(format!("mosaic must have even, non-zero dimensions, got {w}x{h}")));
        }
        if !self.black_level.iter().all(|b| b.is_finite() && *b >= 0.0) {
            return Err(Error::InvalidCapture("black levels must be finite and non-negative".into()));
        }
        if !self.white_level.is_finite() || self.black_level.iter().any(|b| self.white_level <= *b) {
            return Err(Error::DegenerateCalibration);
        }
        if !self.wb_gains.iter().all(|g| g.is_finite() && *g > 0.0) {
            return Err(Error::InvalidCapture("wb_gains must be finite and positive".into()));
        }
        if !self.cam_to_xyz.is_finite() || libm::fabs(self.cam_to_xyz.det()) <= 1e-9 {
            return Err(Error::InvalidCapture("cam_to_xyz is singular".into()));
        }
        self.metadata.validate()
    }

    pub fn width(&self) -> usize {
        self.mosaic.width
    }

    pub fn height(&self) -> usize {
        self.mosaic.height
    }
}

/// Rectangular region whose radiance is `multiplier` times the background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextPatch {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
    pub multiplier: f64,
}

/// A neutral synthetic scene: flat background plus bright rectangles.
///
/// Radiance is expressed as a fraction of the sensor's dynamic range, so a
/// value of 1.0 lands exactly on `white_level`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSceneSpec {
    pub capture_id: String,
    pub width: usize,
    pub height: usize,
    pub background: f64,
    pub patches: Vec<TextPatch>,
    pub noise_sigma: f64,
    pub cfa_pattern: CfaPattern,
    pub black_level: f64,
    pub white_level: f64,
    pub wb_gains: [f64; 3],
    pub cam_to_xyz: Mat3,
    pub metadata: CameraMetadata,
    pub raw_path: String,
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        SyntheticSceneSpec {
            capture_id: "synth-0000".into(),
            width: 64,
            height: 64,
            background: 0.1,
            patches: Vec::new(),
            noise_sigma: 0.0,
            cfa_pattern: CfaPattern::Rggb,
            black_level: 64.0,
            white_level: 16448.0,
            wb_gains: [1.0, 1.0, 1.0],
            cam_to_xyz: Mat3::IDENTITY,
            metadata: CameraMetadata {
                iso: 100.0,
                exposure_time: 1.0 / 60.0,
                aperture: 4.0,
                device_id: "synthcam".into(),
                scene_id: None,
                session_id: None,
            },
            raw_path: "synthetic/synth-0000.raw".into(),
        }
    }
}

/// A synthetic capture together with the radiance it was drawn from.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub capture: RawCapture,
    /// Noise-free radiance per pixel, row-major, in dynamic-range units.
    pub scene: Vec<f64>,
}

impl SyntheticSceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || !self.width.is_multiple_of(2) || !self.height.is_multiple_of(2) {
            return Err(Error::InvalidSpec(format!("dimensions must be even and non-zero, got {}x{}", self.width, self.height)));
        }
        if !(self.background.is_finite() && self.background >= 0.0) {
            return Err(Error::InvalidSpec("background must be finite and non-negative".into()));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::InvalidSpec("noise_sigma must be finite and >= 0".into()));
        }
        for (i, p) in self.patches.iter().enumerate() {
            if p.width == 0 || p.height == 0 || p.x + p.width > self.width || p.y + p.height > self.height {
                return Err(Error::InvalidSpec(format!("patch {i} lies outside the {}x{} frame", self.width, self.height)));
            }
            if !(p.multiplier.is_finite() && p.multiplier >= 0.0) {
                return Err(Error::InvalidSpec(format!("patch {i} multiplier must be finite and >= 0")));
            }
        }
        Ok(())
    }

    /// Radiance map; later patches overwrite earlier ones.
    pub fn radiance(&self) -> Vec<f64> {
        let mut scene = alloc::vec![self.background; self.width * self.height];
        for p in &self.patches {
            for y in p.y..p.y + p.height {
                for x in p.x..p.x + p.width {
                    scene[y * self.width + x] = self.background * p.multiplier;
                }
            }
        }
        scene
    }
}

/// Draws a capture from `spec`. Pure in `(spec, seed)`.
///
/// Each site records `radiance / wb_gain` of its channel (plus Gaussian
/// noise of `noise_sigma`), so white balancing restores a neutral scene.
/// Codes are rounded and saturate at 65535, which may exceed `white_level`.
pub fn synth_capture(spec: &SyntheticSceneSpec, seed: u64) -> Result<SynthOutput> {
    spec.validate()?;
    let scene = spec.radiance();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = if spec.noise_sigma > 0.0 {
        Some(Normal::new(0.0, spec.noise_sigma).map_err(|_| Error::InvalidSpec("bad noise sigma".into()))?)
    } else {
        None
    };
    let range = spec.white_level - spec.black_level;
    let mut codes = Vec::with_capacity(scene.len());
    for y in 0..spec.height {
        for x in 0..spec.width {
            let c = spec.cfa_pattern.channel_at(x, y);
            let mut v = scene[y * spec.width + x] / spec.wb_gains[c];
            if let Some(n) = &noise {
                v += n.sample(&mut rng);
            }
            let code = spec.black_level + v.max(0.0) * range;
            codes.push(libm::round(code).clamp(0.0, u16::MAX as f64) as u16);
        }
    }
    let capture = RawCapture {
        capture_id: spec.capture_id.clone(),
        mosaic: Mosaic::new(spec.width, spec.height, codes)?,
        cfa_pattern: spec.cfa_pattern,
        black_level: [spec.black_level; 4],
        white_level: spec.white_level,
        wb_gains: spec.wb_gains,
        cam_to_xyz: spec.cam_to_xyz,
        metadata: spec.metadata.clone(),
        raw_path: spec.raw_path.clone(),
    };
    capture.validate()?;
    Ok(SynthOutput { capture, scene })
}

/// Sources, devices and grouping used by [`corpus_spec`].
pub const CORPUS_SOURCES: [&str; 3] = ["synth-a", "synth-b", "synth-c"];
const CORPUS_DEVICES: usize = 4;
/// Captures per session; scenes are pairs of consecutive captures.
pub const CORPUS_SESSION_LEN: usize = 6;

/// Scene description for capture `index` of a randomized synthetic corpus.
///
/// Scenes get one to three bright patches over a dim background, random CFA
/// layout, white balance and exposure metadata. Consecutive pairs share a
/// scene and runs of [`CORPUS_SESSION_LEN`] share a session, so the corpus has
/// group structure for split tests.
pub fn corpus_spec(index: usize, seed: u64, width: usize, height: usize) -> SyntheticSceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let capture_id = format!("cap-{index:05}");
    let source = CORPUS_SOURCES[index % CORPUS_SOURCES.len()];
    let background = rng.random_range(0.03..0.25);
    let mut patches = Vec::new();
    for _ in 0..rng.random_range(1..=3) {
        let pw = rng.random_range(2..=(width / 4).max(2)).min(width);
        let ph = rng.random_range(2..=(height / 6).max(2)).min(height);
        patches.push(TextPatch {
            x: rng.random_range(0..=width - pw),
            y: rng.random_range(0..=height - ph),
            width: pw,
            height: ph,
            multiplier: rng.random_range(2.0..10.0),
        });
    }
    const ISO: [f64; 6] = [100.0, 200.0, 400.0, 800.0, 1600.0, 3200.0];
    const APERTURE: [f64; 6] = [1.8, 2.8, 4.0, 5.6, 8.0, 11.0];
    SyntheticSceneSpec {
        capture_id: capture_id.clone(),
        width,
        height,
        background,
        patches,
        noise_sigma: 0.002,
        cfa_pattern: CfaPattern::ALL[rng.random_range(0..4)],
        black_level: 64.0,
        white_level: 16448.0,
        wb_gains: [rng.random_range(1.5..2.5), 1.0, rng.random_range(1.2..2.0)],
        cam_to_xyz: Mat3::IDENTITY,
        metadata: CameraMetadata {
            iso: ISO[rng.random_range(0..ISO.len())],
            exposure_time: 1.0 / rng.random_range(15u32..=2000) as f64,
            aperture: APERTURE[rng.random_range(0..APERTURE.len())],
            device_id: format!("cam-{}", (index / CORPUS_SESSION_LEN) % CORPUS_DEVICES),
            scene_id: Some(format!("scene-{:05}", index / 2)),
            session_id: Some(format!("session-{:04}", index / CORPUS_SESSION_LEN)),
        },
        raw_path: format!("{source}/{capture_id}.raw"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn capture() -> RawCapture {
        synth_capture(&SyntheticSceneSpec { width: 4, height: 4, ..Default::default() }, 1).unwrap().capture
    }

    #[test]
    fn cfa_tiles() {
        assert_eq!(CfaPattern::Rggb.channel_at(0, 0), 0);
        assert_eq!(CfaPattern::Rggb.channel_at(1, 1), 2);
        assert_eq!(CfaPattern::Bggr.channel_at(0, 0), 2);
        assert_eq!(CfaPattern::Grbg.channel_at(1, 0), 0);
        assert_eq!(CfaPattern::Gbrg.channel_at(0, 1), 0);
        assert_eq!(CfaPattern::Gbrg.channel_at(2, 3), 0);
    }

    #[test]
    fn corpus_specs_are_valid_and_grouped() {
        for i in 0..40 {
            let s = corpus_spec(i, 7, 32, 24);
            s.validate().unwrap();
            assert_eq!(s, corpus_spec(i, 7, 32, 24));
            synth_capture(&s, i as u64).unwrap();
        }
        assert_eq!(corpus_spec(2, 7, 32, 24).metadata.scene_id, corpus_spec(3, 7, 32, 24).metadata.scene_id);
        assert_ne!(corpus_spec(5, 7, 32, 24).metadata.session_id, corpus_spec(6, 7, 32, 24).metadata.session_id);
    }

    #[test]
    fn validation_rejects_malformed() {
        let mut c = capture();
        c.metadata.iso = 0.0;
        assert!(matches!(c.validate(), Err(Error::InvalidCapture(_))));

        let mut c = capture();
        c.cam_to_xyz = Mat3([[0.0; 3]; 3]);
        assert!(matches!(c.validate(), Err(Error::InvalidCapture(_))));

        let mut c = capture();
        c.white_level = 64.0;
        assert_eq!(c.validate(), Err(Error::DegenerateCalibration));

        let mut c = capture();
        c.metadata.device_id.clear();
        assert!(c.validate().is_err());

        let mut c = capture();
        c.mosaic = Mosaic::new(3, 4, vec![0; 12]).unwrap();
        assert!(c.validate().is_err());

        let mut c = capture();
        c.wb_gains[2] = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn codes_above_white_are_legal() {
        let mut c = capture();
        c.mosaic = Mosaic::new(4, 4, vec![u16::MAX; 16]).unwrap();
        assert!(c.validate().is_ok());
    }

    #[test]
    fn synth_is_deterministic() {
        let spec = SyntheticSceneSpec { noise_sigma: 0.01, ..Default::default() };
        let a = synth_capture(&spec, 7).unwrap();
        let b = synth_capture(&spec, 7).unwrap();
        let c = synth_capture(&spec, 8).unwrap();
        assert_eq!(a.capture, b.capture);
        assert_ne!(a.capture.mosaic, c.capture.mosaic);
    }

    #[test]
    fn synth_rejects_out_of_bounds_patch() {
        let spec = SyntheticSceneSpec {
            patches: vec![TextPatch { x: 60, y: 0, width: 8, height: 2, multiplier: 3.0 }],
            ..Default::default()
        };
        assert!(matches!(synth_capture(&spec, 0), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn synth_saturates_at_u16_max() {
        let spec = SyntheticSceneSpec { background: 10.0, ..Default::default() };
        let out = synth_capture(&spec, 0).unwrap();
        assert!(out.capture.mosaic.codes().iter().all(|&c| c == u16::MAX));
    }
}
