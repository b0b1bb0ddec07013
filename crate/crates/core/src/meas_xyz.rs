//! RAW → measurement-domain XYZ observation.
//!
//! The operator is a fixed chain of linear stages followed by range clamps:
//! black/white normalization, bilinear demosaicing, white balance, the
//! camera-to-XYZ matrix and a single global scale. Below sensor saturation
//! the whole chain is linear in the sensor signal.

use alloc::string::String;
use alloc::vec::Vec;

use crate::capture::{site_index, CameraMetadata, CfaPattern, RawCapture};
use crate::image::{Image3, Plane};
use crate::{Error, Result};

/// Linear, normalized XYZ observation of one capture. Values lie in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasXyzImage {
    pub capture_id: String,
    pub metadata: CameraMetadata,
    image: Image3,
    /// Channel values that were negative after matrixing and clamped to 0.
    pub negatives_clamped: usize,
}

impl MeasXyzImage {
    /// Wraps an image after checking every value is finite and in `[0, 1]`.
    pub fn new(capture_id: String, metadata: CameraMetadata, image: Image3) -> Result<MeasXyzImage> {
        if let Some(bad) = image.data.iter().flatten().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
            return Err(Error::DomainError(*bad));
        }
        Ok(MeasXyzImage { capture_id, metadata, image, negatives_clamped: 0 })
    }

    pub fn image(&self) -> &Image3 {
        &self.image
    }

    pub fn into_image(self) -> Image3 {
        self.image
    }

    pub fn width(&self) -> usize {
        self.image.width
    }

    pub fn height(&self) -> usize {
        self.image.height
    }

    /// The Y channel.
    pub fn luminance(&self) -> Plane {
        self.image.channel(1)
    }
}

/// Normalized mosaic plus the number of sites at or above `white_level`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedMosaic {
    pub plane: Plane,
    pub saturated: usize,
}

/// `clamp((code - black_s) / (white - black_s), 0, 1)` per CFA site.
pub fn normalize_mosaic(capture: &RawCapture) -> Result<NormalizedMosaic> {
    if capture.black_level.iter().any(|b| capture.white_level <= *b) {
        return Err(Error::DegenerateCalibration);
    }
    let (w, h) = (capture.width(), capture.height());
    let mut data = Vec::with_capacity(w * h);
    let mut saturated = 0;
    for y in 0..h {
        for x in 0..w {
            let code = capture.mosaic.get(x, y) as f64;
            let black = capture.black_level[site_index(x, y)];
            if code >= capture.white_level {
                saturated += 1;
            }
            data.push(((code - black) / (capture.white_level - black)).clamp(0.0, 1.0));
        }
    }
    Ok(NormalizedMosaic { plane: Plane { width: w, height: h, data }, saturated })
}

/// Reflect-101 border handling; keeps CFA parity for offsets of ±1.
#[inline]
fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r.clamp(0, n - 1) as usize
}

/// Bilinear demosaic: every missing color is the mean of the same-color
/// sites in the 3×3 neighbourhood; the sampled color passes through.
pub fn demosaic_bilinear(norm: &Plane, cfa: CfaPattern) -> Result<Image3> {
    let (w, h) = (norm.width, norm.height);
    if w < 2 || h < 2 || w % 2 != 0 || h % 2 != 0 {
        return Err(Error::InvalidCapture(alloc::format!("demosaic needs even dimensions, got {w}x{h}")));
    }
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let own = cfa.channel_at(x, y);
            let mut sum = [0.0f64; 3];
            let mut count = [0u32; 3];
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let sx = mirror(x as isize + dx, w);
                    let sy = mirror(y as isize + dy, h);
                    let c = cfa.channel_at(sx, sy);
                    sum[c] += norm.get(sx, sy);
                    count[c] += 1;
                }
            }
            let mut px = [0.0; 3];
            for c in 0..3 {
                px[c] = if c == own { norm.get(x, y) } else { sum[c] / count[c] as f64 };
            }
            out.push(px);
        }
    }
    Ok(Image3 { width: w, height: h, data: out })
}

/// XYZ of a full-scale white-balanced white pixel, reduced to its largest
/// component. Dividing by it maps a saturated neutral pixel to `Y <= 1`.
pub fn white_scale(capture: &RawCapture) -> Result<f64> {
    let white = capture.cam_to_xyz.mul_vec(capture.wb_gains);
    let s = white.into_iter().fold(f64::NEG_INFINITY, f64::max);
    if !(s.is_finite() && s > 0.0) {
        return Err(Error::InvalidCapture("cam_to_xyz maps white to a non-positive XYZ".into()));
    }
    Ok(s)
}

pub fn meas_xyz_transform(capture: &RawCapture) -> Result<MeasXyzImage> {
    capture.validate()?;
    let norm = normalize_mosaic(capture)?;
    let rgb = demosaic_bilinear(&norm.plane, capture.cfa_pattern)?;
    let scale = white_scale(capture)?;
    let mut negatives = 0;
    let data = rgb
        .data
        .iter()
        .map(|px| {
            let balanced = [px[0] * capture.wb_gains[0], px[1] * capture.wb_gains[1], px[2] * capture.wb_gains[2]];
            let mut xyz = capture.cam_to_xyz.mul_vec(balanced);
            for v in &mut xyz {
                if *v < 0.0 {
                    negatives += 1;
                    *v = 0.0;
                }
                *v = (*v / scale).clamp(0.0, 1.0);
            }
            xyz
        })
        .collect();
    Ok(MeasXyzImage {
        capture_id: capture.capture_id.clone(),
        metadata: capture.metadata.clone(),
        image: Image3 { width: rgb.width, height: rgb.height, data },
        negatives_clamped: negatives,
    })
}
