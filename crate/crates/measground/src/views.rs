//! On-disk forms of measurement views, proxy renders and lost-signal reports.
//!
//! Float planes are a raw little-endian `f32` file (`<stem>.bin`, channels
//! interleaved, row-major) next to a JSON header (`<stem>.json`).

use std::path::{Path, PathBuf};

use measground_core::capture::CameraMetadata;
use measground_core::image::Image3;
use measground_core::isp::{RenderParams, RenderedPixels, RenderedRgb};
use measground_core::lost_signal::LostSignalReport;
use measground_core::meas_xyz::MeasXyzImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pnm::{mask_pgm, Pnm};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaneHeader {
    pub capture_id: String,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub range: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<CameraMetadata>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_path: Option<String>,
}

pub fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::SchemaViolation { path: path.into(), line: e.line(), msg: e.to_string() })
}

pub fn write_float_plane(stem: &Path, header: &PlaneHeader, values: &[f64]) -> Result<()> {
    let expected = header.width * header.height * header.channels;
    if values.len() != expected {
        return Err(Error::DimensionMismatch { path: stem.into(), msg: format!("{} values for a {expected}-value header", values.len()) });
    }
    let bytes: Vec<u8> = values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    write_file(&with_ext(stem, "bin"), &bytes)?;
    write_json(&with_ext(stem, "json"), header)
}

pub fn read_float_plane(stem: &Path) -> Result<(PlaneHeader, Vec<f64>)> {
    let header: PlaneHeader = read_json(&with_ext(stem, "json"))?;
    let bin = with_ext(stem, "bin");
    let bytes = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let expected = header.width * header.height * header.channels;
    if bytes.len() != 4 * expected {
        return Err(Error::DimensionMismatch { path: bin, msg: format!("{} bytes, header implies {}", bytes.len(), 4 * expected) });
    }
    let values = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
    Ok((header, values))
}

/// Writes the view as `<stem>.bin` / `<stem>.json`. Values are stored as
/// `f32`, so a second export of a loaded view reproduces the files exactly.
pub fn save_meas_xyz(z: &MeasXyzImage, raw_path: Option<&str>, stem: &Path) -> Result<()> {
    let header = PlaneHeader {
        capture_id: z.capture_id.clone(),
        height: z.height(),
        width: z.width(),
        channels: 3,
        range: [0.0, 1.0],
        metadata: Some(z.metadata.clone()),
        raw_path: raw_path.map(Into::into),
    };
    let values: Vec<f64> = z.image().data.iter().flatten().copied().collect();
    write_float_plane(stem, &header, &values)
}

pub fn load_meas_xyz(stem: &Path) -> Result<(MeasXyzImage, PlaneHeader)> {
    let (header, values) = read_float_plane(stem)?;
    if header.channels != 3 {
        return Err(Error::DimensionMismatch { path: stem.into(), msg: format!("expected 3 channels, got {}", header.channels) });
    }
    let metadata = header.metadata.clone().ok_or_else(|| Error::SchemaViolation {
        path: with_ext(stem, "json"),
        line: 1,
        msg: "measurement view header lacks metadata".into(),
    })?;
    let data = values.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    let image = Image3::from_vec(header.width, header.height, data)?;
    Ok((MeasXyzImage::new(header.capture_id.clone(), metadata, image)?, header))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PixelFile {
    /// Integer codes in a PPM with maxval `2^bits − 1`.
    Ppm,
    /// Unquantized encoded values as little-endian `f64`.
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderHeader {
    pub capture_id: String,
    pub width: usize,
    pub height: usize,
    pub params: RenderParams,
    pub pixels: PixelFile,
}

/// Stem for the proxy of `capture_id` at `gain`, e.g. `cap-00001_e0.5`.
pub fn proxy_stem(dir: &Path, capture_id: &str, gain: f64) -> PathBuf {
    dir.join(format!("{capture_id}_e{gain}"))
}

/// 8-bit-or-wider PPM of a render, quantizing unquantized renders at the
/// configured bit depth.
pub fn render_ppm(r: &RenderedRgb) -> Pnm {
    let maxval = r.params.max_code();
    let samples = match &r.pixels {
        RenderedPixels::Codes(c) => c.iter().flatten().copied().collect(),
        RenderedPixels::Encoded(e) => e.iter().flatten().map(|&v| (v * maxval as f64).round() as u16).collect(),
    };
    Pnm { width: r.width, height: r.height, channels: 3, maxval, samples }
}

pub fn save_rendered(r: &RenderedRgb, stem: &Path) -> Result<()> {
    let pixels = match &r.pixels {
        RenderedPixels::Codes(_) => {
            let path = with_ext(stem, "ppm");
            write_file(&path, &render_ppm(r).encode())?;
            PixelFile::Ppm
        }
        RenderedPixels::Encoded(e) => {
            let bytes: Vec<u8> = e.iter().flatten().flat_map(|v| v.to_le_bytes()).collect();
            write_file(&with_ext(stem, "f64"), &bytes)?;
            PixelFile::F64
        }
    };
    let header = RenderHeader { capture_id: r.capture_id.clone(), width: r.width, height: r.height, params: r.params.clone(), pixels };
    write_json(&with_ext(stem, "json"), &header)
}

pub fn load_rendered(stem: &Path) -> Result<RenderedRgb> {
    let header: RenderHeader = read_json(&with_ext(stem, "json"))?;
    let n = header.width * header.height;
    let pixels = match header.pixels {
        PixelFile::Ppm => {
            let path = with_ext(stem, "ppm");
            let p = Pnm::read(&path)?;
            if p.channels != 3 || p.width != header.width || p.height != header.height || p.maxval != header.params.max_code() {
                return Err(Error::DimensionMismatch { path, msg: "PPM disagrees with its header".into() });
            }
            RenderedPixels::Codes(p.samples.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
        }
        PixelFile::F64 => {
            let path = with_ext(stem, "f64");
            let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
            if bytes.len() != n * 24 {
                return Err(Error::DimensionMismatch { path, msg: format!("{} bytes, header implies {}", bytes.len(), n * 24) });
            }
            let v: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
            RenderedPixels::Encoded(v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
        }
    };
    Ok(RenderedRgb { capture_id: header.capture_id, width: header.width, height: header.height, params: header.params, pixels })
}

/// `summary.json` of a lost-signal report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LostSignalSummary {
    pub capture_id: String,
    pub exposure_gain: f64,
    pub clipped_fraction: f64,
    pub p99_original: f64,
    pub p99_recovered: f64,
    pub tau: f64,
    pub bits: Option<u8>,
}

impl From<&LostSignalReport> for LostSignalSummary {
    fn from(r: &LostSignalReport) -> Self {
        LostSignalSummary {
            capture_id: r.capture_id.clone(),
            exposure_gain: r.exposure_gain,
            clipped_fraction: r.clipped_fraction,
            p99_original: r.p99_original,
            p99_recovered: r.p99_recovered,
            tau: r.tau,
            bits: r.bits,
        }
    }
}

/// Writes `residual.{bin,json}`, `lost_mask.pgm`, `histogram.csv` and
/// `summary.json` into `dir`.
pub fn emit_report(report: &LostSignalReport, dir: &Path) -> Result<()> {
    let (w, h) = (report.residual_map.width, report.residual_map.height);
    let header = PlaneHeader {
        capture_id: report.capture_id.clone(),
        height: h,
        width: w,
        channels: 1,
        range: [0.0, 1.0],
        metadata: None,
        raw_path: None,
    };
    write_float_plane(&dir.join("residual"), &header, &report.residual_map.data)?;
    write_file(&dir.join("lost_mask.pgm"), &mask_pgm(w, h, &report.lost_mask).encode())?;

    let csv_path = dir.join("histogram.csv");
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::io(&csv_path, std::io::Error::other(e));
    wtr.write_record(["bin_lo", "bin_hi", "count"]).map_err(csv_err)?;
    for b in &report.histogram {
        wtr.serialize((b.bin_lo, b.bin_hi, b.count)).map_err(csv_err)?;
    }
    let bytes = wtr.into_inner().map_err(|e| Error::io(&csv_path, std::io::Error::other(e.to_string())))?;
    write_file(&csv_path, &bytes)?;

    write_json(&dir.join("summary.json"), &LostSignalSummary::from(report))
}
