//! Render inversion and unrecoverable-residual statistics.
//!
//! Inverting a proxy render undoes quantization, transfer, color matrix and
//! exposure gain, but not clipping: every highlight-clipped channel comes
//! back as exactly `1 / gain`. The residual against the original
//! observation is measured on luminance (the Y channel).

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::image::{Image3, Plane};
use crate::isp::{render_proxy_with_mask, ClipMask, RenderParams, RenderedRgb};
use crate::meas_xyz::MeasXyzImage;
use crate::{Error, Result};

/// Two 8-bit code steps.
pub const DEFAULT_TAU: f64 = 2.0 / 255.0;
pub const DEFAULT_BINS: usize = 32;

/// Undo quantization, transfer, matrix and gain. No clamping is applied, so
/// the result may leave `[0, 1]`.
pub fn invert_render(r: &RenderedRgb) -> Result<Image3> {
    r.params.validate()?;
    let inv = r.params.xyz_to_linear_srgb.inverse().ok_or(Error::SingularMatrix)?;
    let gain = r.params.exposure_gain;
    let data = r
        .encoded()
        .into_iter()
        .map(|enc| {
            let lin = [
                r.params.transfer.decode(enc[0]),
                r.params.transfer.decode(enc[1]),
                r.params.transfer.decode(enc[2]),
            ];
            let xyz = inv.mul_vec(lin);
            [xyz[0] / gain, xyz[1] / gain, xyz[2] / gain]
        })
        .collect();
    Image3::from_vec(r.width, r.height, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LostSignalReport {
    pub capture_id: String,
    pub exposure_gain: f64,
    /// Bit depth of the analysed render; `None` when quantization was off.
    pub bits: Option<u8>,
    /// `|Y(z) − Y(recovered)|` per pixel.
    pub residual_map: Plane,
    /// Absolute per-channel residual.
    pub residual_xyz: Image3,
    pub lost_mask: Vec<bool>,
    pub clipped_fraction: f64,
    pub p99_original: f64,
    pub p99_recovered: f64,
    pub histogram: Vec<HistogramBin>,
    pub tau: f64,
}

impl LostSignalReport {
    pub fn lost_count(&self) -> usize {
        self.lost_mask.iter().filter(|&&m| m).count()
    }

    pub fn residual_mass(&self) -> f64 {
        self.residual_map.data.iter().sum()
    }
}

/// Nearest-rank percentile (no interpolation); `p` in `(0, 100]`.
pub fn nearest_rank_percentile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = libm::ceil(p / 100.0 * n as f64) as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Equal-width bins over `[0, max]`; a single `[0, 0]` bin when every value is 0.
pub fn histogram(values: &[f64], bins: usize) -> Vec<HistogramBin> {
    let max = values.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return alloc::vec![HistogramBin { bin_lo: 0.0, bin_hi: 0.0, count: values.len() as u64 }];
    }
    let width = max / bins as f64;
    let mut counts = alloc::vec![0u64; bins];
    for &v in values {
        let i = ((v / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            bin_lo: i as f64 * width,
            bin_hi: if i + 1 == bins { max } else { (i + 1) as f64 * width },
            count,
        })
        .collect()
}

/// Residual statistics of `recovered` against the original observation.
/// `clip` is the forward clip mask of the render that was inverted.
pub fn lost_signal_residual(
    z: &MeasXyzImage,
    recovered: &Image3,
    clip: &ClipMask,
    params: &RenderParams,
    tau: f64,
    bins: usize,
) -> Result<LostSignalReport> {
    let img = z.image();
    if !img.same_shape(recovered) || clip.width != img.width || clip.height != img.height || clip.clipped.len() != img.data.len() {
        return Err(Error::ShapeMismatch);
    }
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::InvalidArgument(alloc::format!("tau must be > 0, got {tau}")));
    }
    if bins < 2 {
        return Err(Error::InvalidArgument(alloc::format!("bins must be >= 2, got {bins}")));
    }
    let residual_xyz: Vec<[f64; 3]> = img
        .data
        .iter()
        .zip(&recovered.data)
        .map(|(a, b)| [libm::fabs(a[0] - b[0]), libm::fabs(a[1] - b[1]), libm::fabs(a[2] - b[2])])
        .collect();
    let residual: Vec<f64> = residual_xyz.iter().map(|r| r[1]).collect();
    let lost_mask = residual.iter().map(|&r| r > tau).collect();
    let y_orig: Vec<f64> = img.data.iter().map(|p| p[1]).collect();
    let y_rec: Vec<f64> = recovered.data.iter().map(|p| p[1]).collect();
    Ok(LostSignalReport {
        capture_id: z.capture_id.clone(),
        exposure_gain: params.exposure_gain,
        bits: params.quantize.then_some(params.bit_depth),
        histogram: histogram(&residual, bins),
        residual_map: Plane { width: img.width, height: img.height, data: residual },
        residual_xyz: Image3 { width: img.width, height: img.height, data: residual_xyz },
        lost_mask,
        clipped_fraction: clip.fraction(),
        p99_original: nearest_rank_percentile(&y_orig, 99.0),
        p99_recovered: nearest_rank_percentile(&y_rec, 99.0),
        tau,
    })
}

/// Render at `params`, invert, and report the residual.
pub fn analyze(z: &MeasXyzImage, params: &RenderParams, tau: f64, bins: usize) -> Result<LostSignalReport> {
    let (rendered, mask) = render_proxy_with_mask(z, params)?;
    let recovered = invert_render(&rendered)?;
    lost_signal_residual(z, &recovered, &mask, params, tau, bins)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isp::{render_proxy, Transfer};
    use crate::linalg::Mat3;
    use alloc::vec;

    fn meas(data: Vec<[f64; 3]>, w: usize, h: usize) -> MeasXyzImage {
        let md = crate::capture::SyntheticSceneSpec::default().metadata;
        MeasXyzImage::new("cap".into(), md, Image3::from_vec(w, h, data).unwrap()).unwrap()
    }

    fn plain(gain: f64) -> RenderParams {
        RenderParams {
            exposure_gain: gain,
            xyz_to_linear_srgb: Mat3::IDENTITY,
            transfer: Transfer::Identity,
            quantize: false,
            ..Default::default()
        }
    }

    #[test]
    fn identity_inversion_is_exact_up_to_clip() {
        let data = vec![[0.1, 0.5, 0.9], [1.0, 0.0, 0.25]];
        let z = meas(data.clone(), 2, 1);
        let back = invert_render(&render_proxy(&z, &plain(1.0)).unwrap()).unwrap();
        assert_eq!(back.data, data);
    }

    #[test]
    fn clipped_pixel_recovers_to_inverse_gain() {
        let z = meas(vec![[0.96; 3]], 1, 1);
        let back = invert_render(&render_proxy(&z, &plain(5.0)).unwrap()).unwrap();
        assert!((back.data[0][1] - 0.2).abs() < 1e-12);
        // same through the sRGB curve and 8-bit codes: 255 decodes to 1 exactly
        let p = RenderParams { exposure_gain: 5.0, xyz_to_linear_srgb: Mat3::IDENTITY, ..Default::default() };
        let back = invert_render(&render_proxy(&z, &p).unwrap()).unwrap();
        assert_eq!(back.data[0][1], 0.2);
    }

    #[test]
    fn zero_residual_report() {
        let z = meas(vec![[0.2; 3]; 4], 2, 2);
        let rep = analyze(&z, &plain(1.0), DEFAULT_TAU, 8).unwrap();
        assert!(rep.residual_map.data.iter().all(|&r| r == 0.0));
        assert_eq!(rep.lost_count(), 0);
        assert_eq!(rep.clipped_fraction, 0.0);
        assert_eq!(rep.histogram, vec![HistogramBin { bin_lo: 0.0, bin_hi: 0.0, count: 4 }]);
    }

    #[test]
    fn ten_percent_clipped_scene() {
        // 10 of 100 pixels at 0.9 clip at gain 2 and come back as 0.5.
        let mut data = vec![[0.1; 3]; 100];
        for p in data.iter_mut().take(10) {
            *p = [0.9; 3];
        }
        let z = meas(data, 10, 10);
        let rep = analyze(&z, &plain(2.0), DEFAULT_TAU, 4).unwrap();
        assert_eq!(rep.clipped_fraction, 0.10);
        for i in 0..10 {
            assert!((rep.residual_map.data[i] - 0.4).abs() < 1e-12);
            assert!(rep.lost_mask[i]);
        }
        assert!(rep.residual_map.data[10..].iter().all(|&r| r == 0.0));
        assert_eq!(rep.histogram.len(), 4);
        assert_eq!(rep.histogram.iter().map(|b| b.count).sum::<u64>(), 100);
        assert_eq!(rep.histogram[3].count, 10);
        assert_eq!(rep.p99_original, 0.9);
        assert_eq!(rep.p99_recovered, 0.5);
    }

    #[test]
    fn nearest_rank() {
        let v: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert_eq!(nearest_rank_percentile(&v, 99.0), 99.0);
        assert_eq!(nearest_rank_percentile(&v, 100.0), 100.0);
        assert_eq!(nearest_rank_percentile(&[3.0, 1.0, 2.0], 50.0), 2.0);
        assert_eq!(nearest_rank_percentile(&[5.0], 99.0), 5.0);
    }

    #[test]
    fn argument_checks() {
        let z = meas(vec![[0.2; 3]; 4], 2, 2);
        assert!(analyze(&z, &plain(1.0), 0.0, 8).is_err());
        assert!(analyze(&z, &plain(1.0), 0.1, 1).is_err());
        let (r, mask) = render_proxy_with_mask(&z, &plain(1.0)).unwrap();
        let wrong = Image3::zeros(1, 4);
        assert_eq!(lost_signal_residual(&z, &wrong, &mask, &r.params, 0.1, 4), Err(Error::ShapeMismatch));
    }
}
