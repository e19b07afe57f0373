//! Dataset manifests. A manifest is a JSONL file, one dataset per line.
//! Curated manifests (the output of `curate`) carry a header line whose
//! digest chains the curation decision to the exact dataset list, so a
//! training run can refuse manifests that were edited after curation.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub id: String,
    pub path: PathBuf,
    pub target_column: String,
    pub declared_rows: usize,
    pub declared_cols: usize,
    /// Free-form origin tag ("corpus-a", "eval-suite", ...); reported in
    /// contamination findings and surfaced for manual review.
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub license: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurationHeader {
    pub curation_digest: String,
    pub source_manifest: String,
    pub kept: usize,
    pub excluded: usize,
}

#[derive(Clone, Debug)]
pub struct Manifest {
    pub header: Option<CurationHeader>,
    pub datasets: Vec<DatasetManifest>,
}

/// Digest over the canonical serialization of the kept dataset lines, in
/// file order. Reformatting is harmless; changing any field is not.
pub fn curation_digest(datasets: &[DatasetManifest]) -> String {
    let mut hasher = Sha256::new();
    for d in datasets {
        hasher.update(serde_json::to_string(d).expect("manifest serializes").as_bytes());
        hasher.update(b"\n");
    }
    let mut hex = String::with_capacity(64);
    for byte in hasher.finalize() {
        let _ = write!(hex, "{byte:02x}");
    }
    hex
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut header = None;
    let mut datasets = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if lineno == 0 {
            if let Ok(h) = serde_json::from_str::<CurationHeader>(line) {
                header = Some(h);
                continue;
            }
        }
        let d: DatasetManifest = serde_json::from_str(line).map_err(|e| {
            Error::Input(format!(
                "{}:{}: malformed manifest line: {e}",
                path.display(),
                lineno + 1
            ))
        })?;
        datasets.push(d);
    }
    if datasets.is_empty() {
        return Err(Error::Input(format!(
            "{}: manifest lists no datasets",
            path.display()
        )));
    }
    let mut seen = std::collections::HashSet::new();
    for d in &datasets {
        if !seen.insert(d.id.clone()) {
            return Err(Error::Input(format!(
                "{}: duplicate dataset id {:?}",
                path.display(),
                d.id
            )));
        }
    }
    Ok(Manifest { header, datasets })
}

impl Manifest {
    /// Guard used by stage-2 training: the manifest must carry a curation
    /// header and its digest must match the dataset lines.
    pub fn verify_curated(&self, path: &Path) -> Result<()> {
        let header = self.header.as_ref().ok_or_else(|| {
            Error::CurationGuard(format!(
                "{}: manifest has no curation header; run `curate` first",
                path.display()
            ))
        })?;
        let actual = curation_digest(&self.datasets);
        if actual != header.curation_digest {
            return Err(Error::CurationGuard(format!(
                "{}: curation digest mismatch (manifest edited after curation?)",
                path.display()
            )));
        }
        Ok(())
    }
}

pub fn write_plain(path: &Path, datasets: &[DatasetManifest]) -> Result<()> {
    let mut out = String::new();
    for d in datasets {
        out.push_str(&serde_json::to_string(d).expect("manifest serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_curated(
    path: &Path,
    source_manifest: &str,
    datasets: &[DatasetManifest],
    excluded: usize,
) -> Result<()> {
    let header = CurationHeader {
        curation_digest: curation_digest(datasets),
        source_manifest: source_manifest.to_string(),
        kept: datasets.len(),
        excluded,
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for d in datasets {
        out.push_str(&serde_json::to_string(d).expect("manifest serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
