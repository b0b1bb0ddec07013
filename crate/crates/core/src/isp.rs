//! Exposure-conditioned proxy renderer.
//!
//! `render_proxy` maps a linear XYZ observation to display RGB through
//! exposure gain, an XYZ → linear-sRGB matrix, clipping to `[0, 1]`, a
//! transfer curve and optional integer quantization.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::linalg::Mat3;
use crate::meas_xyz::MeasXyzImage;
use crate::{Error, Result};

/// Constants of the piecewise sRGB transfer curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SrgbConstants {
    /// Linear-side breakpoint of the forward curve.
    pub linear_threshold: f64,
    /// Encoded-side breakpoint used by the inverse curve.
    pub encoded_threshold: f64,
    pub linear_slope: f64,
    pub scale: f64,
    pub offset: f64,
    pub gamma: f64,
}

pub const SRGB: SrgbConstants = SrgbConstants {
    linear_threshold: 0.0031308,
    encoded_threshold: 0.04045,
    linear_slope: 12.92,
    scale: 1.055,
    offset: 0.055,
    gamma: 2.4,
};

/// D65 XYZ → linear sRGB.
pub const XYZ_TO_LINEAR_SRGB_D65: Mat3 = Mat3([
    [3.2404542, -1.5371385, -0.4985314],
    [-0.9692660, 1.8760108, 0.0415560],
    [0.0556434, -0.2040259, 1.0572252],
]);

/// Default exposure bracket, in stops around unit gain.
pub const DEFAULT_BRACKET: [f64; 4] = [0.5, 1.0, 2.0, 4.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Transfer {
    SrgbPiecewise,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderParams {
    pub exposure_gain: f64,
    #[serde(default = "default_bits")]
    pub bit_depth: u8,
    #[serde(default = "default_matrix")]
    pub xyz_to_linear_srgb: Mat3,
    #[serde(default = "default_transfer")]
    pub transfer: Transfer,
    #[serde(default = "default_quantize")]
    pub quantize: bool,
}

fn default_bits() -> u8 {
    8
}
fn default_matrix() -> Mat3 {
    XYZ_TO_LINEAR_SRGB_D65
}
fn default_transfer() -> Transfer {
    Transfer::SrgbPiecewise
}
fn default_quantize() -> bool {
    true
}

impl Default for RenderParams {
    fn default() -> Self {
        RenderParams {
            exposure_gain: 1.0,
            bit_depth: 8,
            xyz_to_linear_srgb: XYZ_TO_LINEAR_SRGB_D65,
            transfer: Transfer::SrgbPiecewise,
            quantize: true,
        }
    }
}

impl RenderParams {
    pub fn with_gain(&self, exposure_gain: f64) -> RenderParams {
        RenderParams { exposure_gain, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.exposure_gain.is_finite() && self.exposure_gain > 0.0) {
            return Err(Error::InvalidParams(alloc::format!("exposure_gain must be finite and > 0, got {}", self.exposure_gain)));
        }
        if !(1..=16).contains(&self.bit_depth) {
            return Err(Error::InvalidParams(alloc::format!("bit_depth must be in [1, 16], got {}", self.bit_depth)));
        }
        if !self.xyz_to_linear_srgb.is_finite() || self.xyz_to_linear_srgb.inverse().is_none() {
            return Err(Error::SingularMatrix);
        }
        Ok(())
    }

    /// Largest code, `2^bits - 1`.
    pub fn max_code(&self) -> u16 {
        ((1u32 << self.bit_depth) - 1) as u16
    }
}

fn check_unit(v: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(Error::DomainError(v))
    }
}

#[inline]
fn oetf_unchecked(v: f64) -> f64 {
    if v <= SRGB.linear_threshold {
        SRGB.linear_slope * v
    } else {
        // 1.055·v^(1/2.4) − 0.055, arranged so that v = 1 maps to exactly 1.
        SRGB.scale * (libm::pow(v, 1.0 / SRGB.gamma) - 1.0) + 1.0
    }
}

#[inline]
fn eotf_unchecked(e: f64) -> f64 {
    if e <= SRGB.encoded_threshold {
        e / SRGB.linear_slope
    } else {
        libm::pow((e + SRGB.offset) / SRGB.scale, SRGB.gamma)
    }
}

/// Forward sRGB transfer on `[0, 1]`.
pub fn srgb_oetf(v: f64) -> Result<f64> {
    check_unit(v).map(oetf_unchecked)
}

/// Inverse sRGB transfer on `[0, 1]`.
pub fn srgb_eotf(e: f64) -> Result<f64> {
    check_unit(e).map(eotf_unchecked)
}

/// `round(v·(2^bits − 1))`, halves rounded away from zero.
pub fn quantize(v: f64, bits: u8) -> Result<u16> {
    if !(1..=16).contains(&bits) {
        return Err(Error::InvalidParams(alloc::format!("bit_depth must be in [1, 16], got {bits}")));
    }
    let v = check_unit(v)?;
    let max = ((1u32 << bits) - 1) as f64;
    Ok(libm::round(v * max) as u16)
}

impl Transfer {
    pub fn encode(self, v: f64) -> f64 {
        match self {
            Transfer::SrgbPiecewise => oetf_unchecked(v),
            Transfer::Identity => v,
        }
    }

    pub fn decode(self, e: f64) -> f64 {
        match self {
            Transfer::SrgbPiecewise => eotf_unchecked(e),
            Transfer::Identity => e,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RenderedPixels {
    /// Integer codes `< 2^bit_depth`.
    Codes(Vec<[u16; 3]>),
    /// Encoded values in `[0, 1]` when quantization is off.
    Encoded(Vec<[f64; 3]>),
}

impl RenderedPixels {
    pub fn len(&self) -> usize {
        match self {
            RenderedPixels::Codes(v) => v.len(),
            RenderedPixels::Encoded(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedRgb {
    pub capture_id: String,
    pub width: usize,
    pub height: usize,
    pub params: RenderParams,
    pub pixels: RenderedPixels,
}

impl RenderedRgb {
    /// Encoded value of every channel in `[0, 1]` (dequantized if needed).
    pub fn encoded(&self) -> Vec<[f64; 3]> {
        match &self.pixels {
            RenderedPixels::Encoded(v) => v.clone(),
            RenderedPixels::Codes(v) => {
                let max = self.params.max_code() as f64;
                v.iter().map(|p| [p[0] as f64 / max, p[1] as f64 / max, p[2] as f64 / max]).collect()
            }
        }
    }
}

/// Pixels where any channel exceeded 1 before clipping.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipMask {
    pub width: usize,
    pub height: usize,
    pub clipped: Vec<bool>,
    /// Channel values below 0 that were raised to 0; not counted as clipped.
    pub crushed_channels: usize,
}

impl ClipMask {
    pub fn count(&self) -> usize {
        self.clipped.iter().filter(|&&c| c).count()
    }

    pub fn fraction(&self) -> f64 {
        if self.clipped.is_empty() {
            0.0
        } else {
            self.count() as f64 / self.clipped.len() as f64
        }
    }
}

pub fn render_proxy(z: &MeasXyzImage, params: &RenderParams) -> Result<RenderedRgb> {
    render_proxy_with_mask(z, params).map(|(r, _)| r)
}

/// Renders and also returns the forward clip mask needed by lost-signal analysis.
pub fn render_proxy_with_mask(z: &MeasXyzImage, params: &RenderParams) -> Result<(RenderedRgb, ClipMask)> {
    params.validate()?;
    let img = z.image();
    let n = img.data.len();
    let mut clipped = Vec::with_capacity(n);
    let mut crushed = 0;
    let mut encoded = Vec::with_capacity(n);
    for xyz in &img.data {
        let e = params.exposure_gain;
        let mut rgb = params.xyz_to_linear_srgb.mul_vec([e * xyz[0], e * xyz[1], e * xyz[2]]);
        let mut hit = false;
        for v in &mut rgb {
            if *v > 1.0 {
                hit = true;
                *v = 1.0;
            } else if *v < 0.0 {
                crushed += 1;
                *v = 0.0;
            }
            *v = params.transfer.encode(*v);
        }
        clipped.push(hit);
        encoded.push(rgb);
    }
    let pixels = if params.quantize {
        let max = params.max_code() as f64;
        RenderedPixels::Codes(
            encoded
                .iter()
                .map(|p| {
                    let q = |v: f64| libm::round(v.clamp(0.0, 1.0) * max) as u16;
                    [q(p[0]), q(p[1]), q(p[2])]
                })
                .collect(),
        )
    } else {
        RenderedPixels::Encoded(encoded)
    };
    let rendered = RenderedRgb {
        capture_id: z.capture_id.clone(),
        width: img.width,
        height: img.height,
        params: params.clone(),
        pixels,
    };
    let mask = ClipMask { width: img.width, height: img.height, clipped, crushed_channels: crushed };
    Ok((rendered, mask))
}

/// One render per exposure gain, in the given order.
pub fn make_bracket(z: &MeasXyzImage, base: &RenderParams, exposures: &[f64]) -> Result<Vec<RenderedRgb>> {
    if exposures.is_empty() {
        return Err(Error::EmptyBracket);
    }
    exposures.iter().map(|&e| render_proxy(z, &base.with_gain(e))).collect()
}
