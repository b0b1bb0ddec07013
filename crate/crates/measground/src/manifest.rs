//! JSON-lines manifests and their stats sidecars.

use std::io::Write;
use std::path::{Path, PathBuf};

use measground_core::bracketsup::TrainingSample;
use measground_core::dataset::{DatasetManifest, ManifestStats};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::views::{read_json, write_json};

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).expect("record serializes");
        buf.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Parses one record per non-blank line; errors name the 1-based line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(line).map_err(|e| Error::SchemaViolation { path: path.into(), line: i + 1, msg: e.to_string() })?;
        out.push(item);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsFile {
    pub score_floor: f64,
    pub target_size: usize,
    pub stats: ManifestStats,
}

/// Stats sidecar of a manifest: `manifest.jsonl` → `manifest.stats.json`.
pub fn stats_path(path: &Path) -> PathBuf {
    path.with_extension("stats.json")
}

/// `<path>` holds the samples, [`stats_path`] the accounting.
pub fn export_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    write_jsonl(path, &manifest.samples)?;
    let stats = StatsFile { score_floor: manifest.score_floor, target_size: manifest.target_size, stats: manifest.stats.clone() };
    write_json(&stats_path(path), &stats)
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let samples: Vec<TrainingSample> = read_jsonl(path)?;
    let stats: StatsFile = read_json(&stats_path(path))?;
    if stats.stats.kept_total != samples.len() {
        return Err(Error::SchemaViolation {
            path: path.into(),
            line: 0,
            msg: format!("stats report {} samples, manifest holds {}", stats.stats.kept_total, samples.len()),
        });
    }
    Ok(DatasetManifest { samples, stats: stats.stats, score_floor: stats.score_floor, target_size: stats.target_size })
}
