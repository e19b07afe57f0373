//! Contamination screening of a training corpus against an evaluation suite.
//!
//! Five rules run in order per training candidate: minimum-size filter,
//! identity cross-reference against the eval suite, feature-name overlap,
//! row/column content hashing, and a metadata echo for manual review. Rules
//! only ever add findings; exclusion is the union of `Exclude` findings.
//! Hashing is content-based and invariant to column order (rows) and row
//! order (columns), so renamed or shuffled copies still collide.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::DatasetManifest;
use crate::table::{load_csv_from, Table};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct CurationThresholds {
    /// Corpus candidates with at most this many rows are excluded outright;
    /// small tables are both low-value for pre-training and the likeliest
    /// to be somebody's benchmark.
    pub min_rows: usize,
    /// Feature-name Jaccard at or above this flags for review.
    pub name_jaccard_review: f64,
    /// Row or column hash overlap at or above this flags for review.
    pub hash_overlap_review: f64,
    /// Row or column hash overlap at or above this excludes.
    pub hash_overlap_exclude: f64,
}

impl Default for CurationThresholds {
    fn default() -> Self {
        CurationThresholds {
            min_rows: 10_000,
            name_jaccard_review: 0.8,
            hash_overlap_review: 0.2,
            hash_overlap_exclude: 0.5,
        }
    }
}

impl CurationThresholds {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("name_jaccard_review", self.name_jaccard_review),
            ("hash_overlap_review", self.hash_overlap_review),
            ("hash_overlap_exclude", self.hash_overlap_exclude),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!(
                    "curate.{name} must be in [0, 1], got {v}"
                )));
            }
        }
        if self.hash_overlap_review > self.hash_overlap_exclude {
            return Err(Error::Config(format!(
                "curate.hash_overlap_review {} exceeds hash_overlap_exclude {}",
                self.hash_overlap_review, self.hash_overlap_exclude
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Review,
    Exclude,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Finding {
    pub train_id: String,
    /// Absent for corpus-only rules like the size filter.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_id: Option<String>,
    pub rule: String,
    pub score: f64,
    pub severity: Severity,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LoadFailure {
    pub id: String,
    pub message: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CurationReport {
    pub thresholds: CurationThresholds,
    pub n_train: usize,
    pub n_eval: usize,
    pub findings: Vec<Finding>,
    pub excluded: Vec<String>,
    pub kept: Vec<String>,
    /// Datasets that could not be loaded; they are excluded, since a table
    /// that cannot be read cannot be cleared either.
    pub errors: Vec<LoadFailure>,
    /// Metadata of every train/eval pairing that produced any finding, so a
    /// human reviewer sees provenance without re-opening manifests.
    pub review_metadata: Vec<ReviewEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReviewEntry {
    pub id: String,
    pub source: String,
    pub path: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub license: Option<String>,
}

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Hash of a sorted multiset of cell texts. Sorting makes row hashes
/// column-order invariant and column hashes row-order invariant.
fn hash_multiset(mut cells: Vec<String>) -> u64 {
    cells.sort_unstable();
    let mut buf = Vec::new();
    for c in &cells {
        buf.extend_from_slice(c.as_bytes());
        buf.push(0x1f);
    }
    fnv1a64(&buf)
}

/// One hash per row over every canonical cell including the target.
pub fn hash_rows(table: &Table) -> Vec<u64> {
    (0..table.n_rows())
        .map(|r| {
            let mut cells: Vec<String> = table
                .columns
                .iter()
                .map(|c| c.canonical_cell(r))
                .collect();
            cells.push(table.canonical_target(r));
            hash_multiset(cells)
        })
        .collect()
}

/// One hash per column (features and target) over its canonical cells.
pub fn hash_columns(table: &Table) -> Vec<u64> {
    let mut hashes: Vec<u64> = table
        .columns
        .iter()
        .map(|c| hash_multiset((0..table.n_rows()).map(|r| c.canonical_cell(r)).collect()))
        .collect();
    hashes.push(hash_multiset(
        (0..table.n_rows()).map(|r| table.canonical_target(r)).collect(),
    ));
    hashes
}

/// Containment-style overlap: |a is in b| / min(|a|, |b|). A strict subset of
/// the other side scores 1.0, which is the point: partial dumps of an eval
/// set must look as bad as full copies.
pub fn overlap_score(a: &HashSet<u64>, b: &HashSet<u64>) -> f64 {
    let denom = a.len().min(b.len());
    if denom == 0 {
        return 0.0;
    }
    let smaller = if a.len() <= b.len() { a } else { b };
    let larger = if a.len() <= b.len() { b } else { a };
    let inter = smaller.iter().filter(|h| larger.contains(h)).count();
    inter as f64 / denom as f64
}

pub fn feature_name_jaccard(a: &Table, b: &Table) -> f64 {
    let na: BTreeSet<&str> = a.columns.iter().map(|c| c.name.as_str()).collect();
    let nb: BTreeSet<&str> = b.columns.iter().map(|c| c.name.as_str()).collect();
    let inter = na.intersection(&nb).count();
    let union = na.union(&nb).count();
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

struct EvalSide {
    id: String,
    table: Table,
    row_hashes: HashSet<u64>,
    col_hashes: HashSet<u64>,
}

/// Run the full screen of `train` candidates against the `eval` suite.
/// Tables are loaded from `base_dir`-relative paths. The returned report is
/// fully deterministic: findings are sorted by (severity desc, train, eval,
/// rule) and every list in it is sorted.
pub fn scan_corpus(
    train: &[DatasetManifest],
    eval: &[DatasetManifest],
    base_dir: &Path,
    thresholds: &CurationThresholds,
) -> Result<CurationReport> {
    let mut findings = Vec::new();
    let mut errors = Vec::new();
    let mut excluded = BTreeSet::new();

    let mut eval_sides = Vec::new();
    for m in eval {
        match load_csv_from(&resolve(base_dir, m), m) {
            Ok(table) => {
                let row_hashes = hash_rows(&table).into_iter().collect();
                let col_hashes = hash_columns(&table).into_iter().collect();
                eval_sides.push(EvalSide { id: m.id.clone(), table, row_hashes, col_hashes });
            }
            Err(e) => errors.push(LoadFailure { id: m.id.clone(), message: e.to_string() }),
        }
    }

    let mut flagged_pairs: BTreeSet<(String, Option<String>)> = BTreeSet::new();
    for m in train {
        let table = match load_csv_from(&resolve(base_dir, m), m) {
            Ok(t) => t,
            Err(e) => {
                errors.push(LoadFailure { id: m.id.clone(), message: e.to_string() });
                excluded.insert(m.id.clone());
                findings.push(Finding {
                    train_id: m.id.clone(),
                    eval_id: None,
                    rule: "load-error".into(),
                    score: 1.0,
                    severity: Severity::Exclude,
                    detail: e.to_string(),
                });
                flagged_pairs.insert((m.id.clone(), None));
                continue;
            }
        };

        if table.n_rows() <= thresholds.min_rows {
            excluded.insert(m.id.clone());
            findings.push(Finding {
                train_id: m.id.clone(),
                eval_id: None,
                rule: "size".into(),
                score: 1.0,
                severity: Severity::Exclude,
                detail: format!(
                    "{} rows <= minimum {}",
                    table.n_rows(),
                    thresholds.min_rows
                ),
            });
            flagged_pairs.insert((m.id.clone(), None));
        }

        let row_hashes: HashSet<u64> = hash_rows(&table).into_iter().collect();
        let col_hashes: HashSet<u64> = hash_columns(&table).into_iter().collect();

        for ev in &eval_sides {
            let mut pair_findings = Vec::new();

            // Identity: exact id or file-stem match is conclusive; matching
            // declared shape alone is only suspicious.
            let train_stem = stem(&m.path);
            let eval_stem = eval
                .iter()
                .find(|e| e.id == ev.id)
                .map(|e| stem(&e.path))
                .unwrap_or_default();
            if m.id == ev.id || (!train_stem.is_empty() && train_stem == eval_stem) {
                pair_findings.push(("identity".to_string(), 1.0, Severity::Exclude,
                    "dataset id or file name matches an eval dataset".to_string()));
            } else if (table.n_rows(), table.n_features()) == (ev.table.n_rows(), ev.table.n_features())
            {
                pair_findings.push(("identity".to_string(), 0.5, Severity::Review,
                    format!("shape ({}, {}) matches an eval dataset",
                        table.n_rows(), table.n_features())));
            }

            let jac = feature_name_jaccard(&table, &ev.table);
            if jac >= thresholds.name_jaccard_review {
                pair_findings.push(("feature-names".to_string(), jac, Severity::Review,
                    format!("feature-name Jaccard {jac:.3}")));
            }

            let row_ov = overlap_score(&row_hashes, &ev.row_hashes);
            let col_ov = overlap_score(&col_hashes, &ev.col_hashes);
            for (what, ov) in [("row", row_ov), ("column", col_ov)] {
                if ov >= thresholds.hash_overlap_exclude {
                    pair_findings.push((format!("{what}-hash"), ov, Severity::Exclude,
                        format!("{what} hash overlap {ov:.3}")));
                } else if ov >= thresholds.hash_overlap_review {
                    pair_findings.push((format!("{what}-hash"), ov, Severity::Review,
                        format!("{what} hash overlap {ov:.3}")));
                }
            }

            for (rule, score, severity, detail) in pair_findings {
                if severity == Severity::Exclude {
                    excluded.insert(m.id.clone());
                }
                flagged_pairs.insert((m.id.clone(), Some(ev.id.clone())));
                findings.push(Finding {
                    train_id: m.id.clone(),
                    eval_id: Some(ev.id.clone()),
                    rule,
                    score,
                    severity,
                    detail,
                });
            }
        }
    }

    findings.sort_by(|a, b| {
        b.severity
            .cmp(&a.severity)
            .then_with(|| a.train_id.cmp(&b.train_id))
            .then_with(|| a.eval_id.cmp(&b.eval_id))
            .then_with(|| a.rule.cmp(&b.rule))
    });

    // Metadata echo for everything that was flagged, for manual review.
    let mut review_ids: BTreeSet<&str> = BTreeSet::new();
    for (train_id, eval_id) in &flagged_pairs {
        review_ids.insert(train_id);
        if let Some(e) = eval_id {
            review_ids.insert(e);
        }
    }
    let review_metadata = review_ids
        .into_iter()
        .filter_map(|id| {
            train
                .iter()
                .chain(eval.iter())
                .find(|m| m.id == id)
                .map(|m| ReviewEntry {
                    id: m.id.clone(),
                    source: m.source.clone(),
                    path: m.path.display().to_string(),
                    url: m.url.clone(),
                    license: m.license.clone(),
                })
        })
        .collect();

    let kept = train
        .iter()
        .map(|m| m.id.clone())
        .filter(|id| !excluded.contains(id))
        .collect();

    Ok(CurationReport {
        thresholds: thresholds.clone(),
        n_train: train.len(),
        n_eval: eval.len(),
        findings,
        excluded: excluded.into_iter().collect(),
        kept,
        errors,
        review_metadata,
    })
}

fn resolve(base: &Path, m: &DatasetManifest) -> std::path::PathBuf {
    if m.path.is_absolute() {
        m.path.clone()
    } else {
        base.join(&m.path)
    }
}

/// Line-delimited rendering of a report: a summary record, then one record
/// per finding, load error, and review-metadata entry. Record order is fixed
/// by the (sorted) report contents, so identical scans render identical
/// bytes.
pub fn render_report_jsonl(report: &CurationReport) -> String {
    let mut out = String::new();
    let mut push = |v: serde_json::Value| {
        out.push_str(&v.to_string());
        out.push('\n');
    };
    push(serde_json::json!({
        "record": "summary",
        "n_train": report.n_train,
        "n_eval": report.n_eval,
        "kept": report.kept,
        "excluded": report.excluded,
        "thresholds": report.thresholds,
    }));
    for f in &report.findings {
        push(serde_json::json!({ "record": "finding", "finding": f }));
    }
    for e in &report.errors {
        push(serde_json::json!({ "record": "load_error", "error": e }));
    }
    for m in &report.review_metadata {
        push(serde_json::json!({ "record": "metadata", "dataset": m }));
    }
    out
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}
