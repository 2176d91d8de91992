//! Run manifests: what ran, with which inputs, and what it wrote.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use bnsp_core::{io, Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_SUFFIX: &str = ".manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    /// Arguments after the program name, enough to re-run the command.
    pub args: Vec<String>,
    /// Working directory the command ran in; relative paths resolve against it.
    pub cwd: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    /// sha256 per input path.
    pub inputs: BTreeMap<String, String>,
    /// sha256 per artifact path.
    pub outputs: BTreeMap<String, String>,
    pub wall_clock_secs: f64,
}

pub fn digest_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn digests(paths: &[PathBuf]) -> Result<BTreeMap<String, String>> {
    paths
        .iter()
        .map(|p| Ok((p.display().to_string(), digest_file(p)?)))
        .collect()
}

/// `<artifact>.manifest.json` next to the primary artifact.
pub fn manifest_path(primary: &Path) -> PathBuf {
    let mut s = primary.as_os_str().to_owned();
    s.push(MANIFEST_SUFFIX);
    PathBuf::from(s)
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = io::read_text(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })
    }
}
