//! Artifact files: CSV with 17 significant digits, pretty JSON, and the run
//! manifest.

use crate::CliError;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

/// Shortest format that round-trips every f64: 17 significant digits.
pub fn fmt17(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        String::new()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Collects the files a command writes into one output directory.
#[derive(Debug)]
pub struct ArtifactWriter {
    dir: PathBuf,
    entries: Vec<ManifestEntry>,
}

impl ArtifactWriter {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            entries: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.entries.retain(|e| e.file != name);
        self.entries.push(ManifestEntry {
            file: name.to_string(),
            bytes: bytes.len() as u64,
            sha256: hex::encode(Sha256::digest(bytes)),
        });
        Ok(path)
    }

    /// Columns of equal length; missing values are written as empty fields.
    pub fn csv(&mut self, name: &str, header: &[&str], cols: &[&[f64]]) -> Result<PathBuf, CliError> {
        let rows = cols.first().map_or(0, |c| c.len());
        debug_assert!(cols.iter().all(|c| c.len() == rows));
        let mut w = csv::Writer::from_writer(Vec::new());
        let fail = |e: csv::Error| CliError::Runtime {
            stage: "output",
            message: e.to_string(),
        };
        w.write_record(header).map_err(fail)?;
        for i in 0..rows {
            w.write_record(cols.iter().map(|c| fmt17(c[i]))).map_err(fail)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Runtime {
            stage: "output",
            message: e.to_string(),
        })?;
        self.put(name, &bytes)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut bytes = serde_json::to_vec_pretty(value).expect("artifact serializes");
        bytes.push(b'\n');
        self.put(name, &bytes)
    }

    /// Files outside the manifest, such as wall-clock timings.
    pub fn untracked<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let mut bytes = serde_json::to_vec_pretty(value).expect("artifact serializes");
        bytes.push(b'\n');
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))
    }
}

/// One numeric column of a CSV file with a header row.
pub fn read_column(path: &Path, column: &str) -> Result<Vec<f64>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let idx = r
        .headers()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| CliError::Config(format!("{}: no column `{column}`", path.display())))?;
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let v: f64 = rec
            .get(idx)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| CliError::Config(format!("{}: bad value on row {}", path.display(), line + 2)))?;
        out.push(v);
    }
    Ok(out)
}
