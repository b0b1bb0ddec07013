//! Capture bundles: a directory holding `mosaic.pgm` and `capture.json`.

use std::path::{Path, PathBuf};

use measground_core::capture::{CameraMetadata, CfaPattern, Mosaic, RawCapture};
use measground_core::Mat3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pnm::Pnm;

pub const MOSAIC_FILE: &str = "mosaic.pgm";
pub const SIDECAR_FILE: &str = "capture.json";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BlackLevel {
    Scalar(f64),
    PerSite([f64; 4]),
}

impl BlackLevel {
    pub fn expand(self) -> [f64; 4] {
        match self {
            BlackLevel::Scalar(b) => [b; 4],
            BlackLevel::PerSite(b) => b,
        }
    }
}

/// `capture.json` contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub capture_id: String,
    pub cfa_pattern: String,
    pub black_level: BlackLevel,
    pub white_level: f64,
    pub wb_gains: [f64; 3],
    pub cam_to_xyz: Mat3,
    pub metadata: CameraMetadata,
    pub raw_path: String,
}

impl Sidecar {
    pub fn from_capture(c: &RawCapture) -> Sidecar {
        Sidecar {
            capture_id: c.capture_id.clone(),
            cfa_pattern: c.cfa_pattern.name().into(),
            black_level: BlackLevel::PerSite(c.black_level),
            white_level: c.white_level,
            wb_gains: c.wb_gains,
            cam_to_xyz: c.cam_to_xyz,
            metadata: c.metadata.clone(),
            raw_path: c.raw_path.clone(),
        }
    }
}

pub fn load_capture_bundle(dir: &Path) -> Result<RawCapture> {
    let sidecar_path = dir.join(SIDECAR_FILE);
    let text = std::fs::read_to_string(&sidecar_path).map_err(|e| Error::io(&sidecar_path, e))?;
    let malformed = |msg: String| Error::MalformedSidecar { path: sidecar_path.clone(), msg };
    let sidecar: Sidecar = serde_json::from_str(&text).map_err(|e| malformed(e.to_string()))?;
    let cfa = CfaPattern::parse(&sidecar.cfa_pattern).ok_or_else(|| malformed(format!("unknown cfa_pattern {:?}", sidecar.cfa_pattern)))?;

    let mosaic_path = dir.join(MOSAIC_FILE);
    let pgm = Pnm::read(&mosaic_path)?;
    if pgm.channels != 1 || pgm.maxval != u16::MAX {
        return Err(Error::Pnm { path: mosaic_path, msg: format!("expected 16-bit P5 with maxval 65535, got maxval {}", pgm.maxval) });
    }
    if pgm.width == 0 || pgm.height == 0 || pgm.width % 2 != 0 || pgm.height % 2 != 0 {
        return Err(Error::DimensionMismatch {
            path: mosaic_path,
            msg: format!("mosaic must tile whole 2x2 CFA blocks, got {}x{}", pgm.width, pgm.height),
        });
    }
    let capture = RawCapture {
        capture_id: sidecar.capture_id,
        mosaic: Mosaic::new(pgm.width, pgm.height, pgm.samples)?,
        cfa_pattern: cfa,
        black_level: sidecar.black_level.expand(),
        white_level: sidecar.white_level,
        wb_gains: sidecar.wb_gains,
        cam_to_xyz: sidecar.cam_to_xyz,
        metadata: sidecar.metadata,
        raw_path: sidecar.raw_path,
    };
    capture.validate().map_err(|e| malformed(e.to_string()))?;
    Ok(capture)
}

pub fn save_capture_bundle(capture: &RawCapture, dir: &Path) -> Result<()> {
    capture.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let pgm = Pnm {
        width: capture.width(),
        height: capture.height(),
        channels: 1,
        maxval: u16::MAX,
        samples: capture.mosaic.codes().to_vec(),
    };
    pgm.write(&dir.join(MOSAIC_FILE))?;
    let json = serde_json::to_string_pretty(&Sidecar::from_capture(capture)).expect("sidecar serializes");
    let path = dir.join(SIDECAR_FILE);
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}

/// Bundle directories directly under `root` (or `root` itself if it is one),
/// sorted by path.
pub fn find_bundles(root: &Path) -> Result<Vec<PathBuf>> {
    if root.join(SIDECAR_FILE).is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    let entries = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(root, e))?.path();
        if path.join(SIDECAR_FILE).is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}
