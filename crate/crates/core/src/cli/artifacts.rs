//! Output directories, checksummed manifests and small file helpers.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ArtifactRecord {
    /// Path relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Everything needed to trace an output directory back to its inputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub output_dir: String,
    pub seeds: Vec<u64>,
    pub config: Vec<(String, String)>,
    pub started_at: String,
    pub finished_at: String,
    pub artifacts: Vec<ArtifactRecord>,
}

pub fn timestamp() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else if path.strip_prefix(root).ok() != Some(Path::new(MANIFEST_FILE)) {
            out.push(path);
        }
    }
    Ok(())
}

/// Checksums of every file under `dir` except the manifest itself, sorted by path.
pub fn scan_artifacts(dir: &Path) -> Result<Vec<ArtifactRecord>> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    let mut records = files
        .iter()
        .map(|p| {
            let rel = p.strip_prefix(dir).unwrap_or(p);
            let path = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            Ok(ArtifactRecord {
                path,
                sha256: sha256_file(p)?,
                bytes: fs::metadata(p)?.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    records.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(records)
}

impl RunManifest {
    pub fn new(
        command: &str,
        output_dir: &Path,
        seeds: Vec<u64>,
        config: Vec<(String, String)>,
    ) -> Self {
        Self {
            command: command.to_string(),
            output_dir: output_dir.display().to_string(),
            seeds,
            config,
            started_at: timestamp(),
            finished_at: String::new(),
            artifacts: Vec::new(),
        }
    }

    /// Scans the output directory, stamps the end time and writes `manifest.json`.
    pub fn finish(mut self, output_dir: &Path) -> Result<Self> {
        self.artifacts = scan_artifacts(output_dir)?;
        self.finished_at = timestamp();
        write_json(&output_dir.join(MANIFEST_FILE), &self)?;
        Ok(self)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| std::io::Error::other(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text)?;
    Ok(())
}
