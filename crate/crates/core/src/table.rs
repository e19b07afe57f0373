//! Tabular data loading and the preprocessing pipeline applied before every
//! training or evaluation step: ordinal encoding, rare-class merging, row
//! caps, context/query splitting, and z-normalization from context rows only.
//!
//! Pipeline order matters and is fixed: encode, merge classes, cap rows,
//! split, normalize. Encoding and merging run on the full table so codes do
//! not depend on which rows survive the cap.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::manifest::DatasetManifest;
use crate::rng::{rng_for, Stream};

/// Fixed output arity of the classifier head; rarer classes are merged away.
pub const MAX_CLASSES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Clone, Debug)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
    /// Numeric value or ordinal code; 0.0 placeholder where `missing`.
    pub values: Vec<f64>,
    pub missing: Vec<bool>,
    /// Original trimmed cell text for tables loaded from CSV; `None` for
    /// synthetic tables, whose canonical form is derived from `values`.
    pub raw: Option<Vec<String>>,
}

#[derive(Clone, Debug)]
pub struct Table {
    pub id: String,
    pub columns: Vec<Column>,
    /// Class code per row, always < `class_labels.len()`.
    pub target: Vec<usize>,
    pub target_raw: Option<Vec<String>>,
    /// Code -> original label; codes are assigned in lexicographic label
    /// order at load time.
    pub class_labels: Vec<String>,
}

/// Render a number the way `Display` round-trips it, folding -0 into 0 so
/// textually different encodings of the same value hash identically.
pub fn canonical_number(x: f64) -> String {
    if x == 0.0 {
        "0".to_string()
    } else {
        format!("{x}")
    }
}

fn canonical_text(s: &str) -> String {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => canonical_number(v),
        _ => s.to_string(),
    }
}

impl Column {
    /// Canonical cell text used by contamination hashing: missing cells are
    /// empty, numbers are normalized, everything else is the trimmed text.
    pub fn canonical_cell(&self, row: usize) -> String {
        if self.missing[row] {
            return String::new();
        }
        match &self.raw {
            Some(raw) => canonical_text(&raw[row]),
            None => canonical_number(self.values[row]),
        }
    }
}

impl Table {
    pub fn n_rows(&self) -> usize {
        self.target.len()
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_labels.len()
    }

    pub fn canonical_target(&self, row: usize) -> String {
        match &self.target_raw {
            Some(raw) => canonical_text(&raw[row]),
            None => canonical_text(&self.class_labels[self.target[row]]),
        }
    }

    /// New table containing `rows` in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Table {
        let columns = self
            .columns
            .iter()
            .map(|c| Column {
                name: c.name.clone(),
                kind: c.kind,
                values: rows.iter().map(|&r| c.values[r]).collect(),
                missing: rows.iter().map(|&r| c.missing[r]).collect(),
                raw: c
                    .raw
                    .as_ref()
                    .map(|raw| rows.iter().map(|&r| raw[r].clone()).collect()),
            })
            .collect();
        Table {
            id: self.id.clone(),
            columns,
            target: rows.iter().map(|&r| self.target[r]).collect(),
            target_raw: self
                .target_raw
                .as_ref()
                .map(|raw| rows.iter().map(|&r| raw[r].clone()).collect()),
            class_labels: self.class_labels.clone(),
        }
    }

    /// Dense feature matrix plus missingness mask for the given rows.
    pub fn feature_matrix(&self, rows: &[usize]) -> (Array2<f64>, Array2<bool>) {
        let mut values = Array2::zeros((rows.len(), self.columns.len()));
        let mut missing = Array2::from_elem((rows.len(), self.columns.len()), false);
        for (i, &r) in rows.iter().enumerate() {
            for (j, col) in self.columns.iter().enumerate() {
                values[[i, j]] = col.values[r];
                missing[[i, j]] = col.missing[r];
            }
        }
        (values, missing)
    }

    pub fn labels(&self, rows: &[usize]) -> Vec<usize> {
        rows.iter().map(|&r| self.target[r]).collect()
    }
}

pub fn load_csv(manifest: &DatasetManifest) -> Result<Table> {
    load_csv_from(&manifest.path, manifest)
}

/// Same as `load_csv` but with an explicit path, for manifests whose `path`
/// is relative to the manifest file rather than the working directory.
pub fn load_csv_from(path: &Path, manifest: &DatasetManifest) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;

    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Input(format!("{}: bad header: {e}", path.display())))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers.is_empty() {
        return Err(Error::Input(format!("{}: empty header", path.display())));
    }
    let mut seen = BTreeSet::new();
    for h in &headers {
        if !seen.insert(h.clone()) {
            return Err(Error::Input(format!(
                "{}: duplicate column name {h:?}",
                path.display()
            )));
        }
    }
    let target_idx = headers
        .iter()
        .position(|h| *h == manifest.target_column)
        .ok_or_else(|| {
            Error::Input(format!(
                "{}: target column {:?} not found",
                path.display(),
                manifest.target_column
            ))
        })?;
    if headers.len() < 2 {
        return Err(Error::Input(format!(
            "{}: no feature columns besides the target",
            path.display()
        )));
    }

    let mut cells: Vec<Vec<String>> = vec![Vec::new(); headers.len()];
    let mut n_rows = 0usize;
    for (lineno, record) in reader.records().enumerate() {
        let record =
            record.map_err(|e| Error::Input(format!("{}: row {}: {e}", path.display(), lineno + 2)))?;
        if record.len() != headers.len() {
            return Err(Error::Input(format!(
                "{}: row {}: expected {} cells, got {}",
                path.display(),
                lineno + 2,
                headers.len(),
                record.len()
            )));
        }
        for (j, cell) in record.iter().enumerate() {
            cells[j].push(cell.trim().to_string());
        }
        n_rows += 1;
    }
    if n_rows == 0 {
        return Err(Error::Input(format!("{}: no data rows", path.display())));
    }
    if (n_rows, headers.len()) != (manifest.declared_rows, manifest.declared_cols) {
        return Err(Error::Input(format!(
            "{}: shape ({n_rows}, {}) does not match declared ({}, {})",
            path.display(),
            headers.len(),
            manifest.declared_rows,
            manifest.declared_cols
        )));
    }

    // Target: labels are opaque trimmed strings, codes in lexicographic order.
    let target_raw = cells[target_idx].clone();
    if let Some(i) = target_raw.iter().position(|c| c.is_empty()) {
        return Err(Error::Input(format!(
            "{}: row {}: missing target label",
            path.display(),
            i + 2
        )));
    }
    let class_labels: Vec<String> = target_raw
        .iter()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let code_of: BTreeMap<&str, usize> = class_labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();
    let target: Vec<usize> = target_raw.iter().map(|l| code_of[l.as_str()]).collect();

    let mut columns = Vec::new();
    for (j, name) in headers.iter().enumerate() {
        if j == target_idx {
            continue;
        }
        let raw = std::mem::take(&mut cells[j]);
        let missing: Vec<bool> = raw.iter().map(|c| c.is_empty()).collect();
        let parsed: Vec<Option<f64>> = raw
            .iter()
            .map(|c| c.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect();
        let numeric = raw
            .iter()
            .zip(&parsed)
            .all(|(c, p)| c.is_empty() || p.is_some());
        let (kind, values) = if numeric {
            let values = parsed.iter().map(|p| p.unwrap_or(0.0)).collect();
            (ColumnKind::Numeric, values)
        } else {
            // Codes are assigned by `ordinal_encode`; placeholder until then.
            (ColumnKind::Categorical, vec![0.0; n_rows])
        };
        columns.push(Column {
            name: name.clone(),
            kind,
            values,
            missing,
            raw: Some(raw),
        });
    }

    Ok(Table {
        id: manifest.id.clone(),
        columns,
        target,
        target_raw: Some(target_raw),
        class_labels,
    })
}

/// Assign ordinal codes to categorical columns: distinct non-missing cell
/// texts get codes 0.. in lexicographic order. Numeric columns pass through,
/// so the operation is idempotent.
pub fn ordinal_encode(table: &Table) -> Table {
    let mut out = table.clone();
    for col in &mut out.columns {
        if col.kind != ColumnKind::Categorical {
            continue;
        }
        let raw = col
            .raw
            .as_ref()
            .expect("categorical columns always retain raw text");
        let distinct: Vec<&String> = raw
            .iter()
            .zip(&col.missing)
            .filter(|(_, &m)| !m)
            .map(|(c, _)| c)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let code_of: BTreeMap<&str, usize> = distinct
            .iter()
            .enumerate()
            .map(|(i, c)| (c.as_str(), i))
            .collect();
        for (i, cell) in raw.iter().enumerate() {
            col.values[i] = if col.missing[i] {
                0.0
            } else {
                code_of[cell.as_str()] as f64
            };
        }
    }
    out
}

/// Keep the `MAX_CLASSES - 1` most frequent classes (ties broken by
/// lexicographically smaller label) and merge the rest into one class with
/// the highest code. Tables within the limit pass through unchanged.
pub fn merge_rare_classes(table: &Table) -> Table {
    if table.n_classes() <= MAX_CLASSES {
        return table.clone();
    }
    let mut counts = vec![0usize; table.n_classes()];
    for &c in &table.target {
        counts[c] += 1;
    }
    let mut order: Vec<usize> = (0..table.n_classes()).collect();
    order.sort_by(|&a, &b| {
        counts[b]
            .cmp(&counts[a])
            .then_with(|| table.class_labels[a].cmp(&table.class_labels[b]))
    });
    let kept = &order[..MAX_CLASSES - 1];
    let mut new_code = vec![MAX_CLASSES - 1; table.n_classes()];
    let mut class_labels = Vec::with_capacity(MAX_CLASSES);
    for (rank, &code) in kept.iter().enumerate() {
        new_code[code] = rank;
        class_labels.push(table.class_labels[code].clone());
    }
    class_labels.push("(merged)".to_string());

    let mut out = table.clone();
    out.target = table.target.iter().map(|&c| new_code[c]).collect();
    out.class_labels = class_labels;
    out
}

/// Row budget under both caps. Zero budget (too many columns for the cell
/// cap) is an error: the table cannot be represented at all.
pub fn row_budget(
    n_rows: usize,
    n_features: usize,
    max_rows: usize,
    max_cells: usize,
) -> Result<usize> {
    if n_features == 0 {
        return Err(Error::Input("table has no feature columns".into()));
    }
    let by_cells = max_cells / n_features;
    let budget = n_rows.min(max_rows).min(by_cells);
    if budget == 0 {
        return Err(Error::Input(format!(
            "row budget is zero: {n_features} columns exceed the {max_cells}-cell cap"
        )));
    }
    Ok(budget)
}

/// Uniformly subsample rows without replacement down to the budget,
/// preserving original row order. Consumes randomness only when the budget
/// actually binds.
pub fn apply_caps(table: &Table, max_rows: usize, max_cells: usize, seed: u64) -> Result<Table> {
    let budget = row_budget(table.n_rows(), table.n_features(), max_rows, max_cells)?;
    if budget >= table.n_rows() {
        return Ok(table.clone());
    }
    let mut rng = rng_for(seed, Stream::RowSubsample, 0);
    let mut rows: Vec<usize> = rand::seq::index::sample(&mut rng, table.n_rows(), budget).into_vec();
    rows.sort_unstable();
    Ok(table.select_rows(&rows))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub context: Vec<usize>,
    pub query: Vec<usize>,
}

/// Disjoint context/query row partition. The context gets floor(n * fraction)
/// rows, clamped so both sides are non-empty; indices come back sorted.
pub fn context_query_split(n_rows: usize, fraction: f64, seed: u64) -> Result<Split> {
    if n_rows < 2 {
        return Err(Error::Input(format!(
            "need at least 2 rows to split, got {n_rows}"
        )));
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Config(format!(
            "context fraction {fraction} outside [0, 1]"
        )));
    }
    let n_ctx = ((n_rows as f64 * fraction).floor() as usize).clamp(1, n_rows - 1);
    let mut rows: Vec<usize> = (0..n_rows).collect();
    let mut rng = rng_for(seed, Stream::ContextSplit, 0);
    rows.shuffle(&mut rng);
    let mut context = rows[..n_ctx].to_vec();
    let mut query = rows[n_ctx..].to_vec();
    context.sort_unstable();
    query.sort_unstable();
    Ok(Split { context, query })
}

#[derive(Clone, Debug)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Z-normalize features in place using mean and population standard
/// deviation computed from non-missing context cells only. Zero-variance and
/// all-missing columns become all zeros; missing cells are zero-filled after
/// normalization so they carry no signal.
pub fn znormalize(
    context: &mut Array2<f64>,
    context_missing: &Array2<bool>,
    query: &mut Array2<f64>,
    query_missing: &Array2<bool>,
) -> NormStats {
    let n_cols = context.ncols();
    assert_eq!(query.ncols(), n_cols, "context/query column mismatch");
    let mut mean = vec![0.0; n_cols];
    let mut std = vec![0.0; n_cols];
    for j in 0..n_cols {
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 0..context.nrows() {
            if !context_missing[[i, j]] {
                sum += context[[i, j]];
                count += 1;
            }
        }
        if count > 0 {
            let m = sum / count as f64;
            let mut ss = 0.0;
            for i in 0..context.nrows() {
                if !context_missing[[i, j]] {
                    let d = context[[i, j]] - m;
                    ss += d * d;
                }
            }
            mean[j] = m;
            std[j] = (ss / count as f64).sqrt();
        }
    }
    for (mat, miss) in [
        (&mut *context, context_missing),
        (&mut *query, query_missing),
    ] {
        for i in 0..mat.nrows() {
            for j in 0..n_cols {
                mat[[i, j]] = if miss[[i, j]] || std[j] == 0.0 {
                    0.0
                } else {
                    (mat[[i, j]] - mean[j]) / std[j]
                };
            }
        }
    }
    NormStats { mean, std }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::manifest::DatasetManifest;
    use std::path::PathBuf;

    pub(crate) fn write_csv(dir: &Path, name: &str, text: &str) -> PathBuf {
        let path = dir.join(name);
        std::fs::write(&path, text).unwrap();
        path
    }

    pub(crate) fn manifest_for(path: &Path, target: &str, rows: usize, cols: usize) -> DatasetManifest {
        DatasetManifest {
            id: path.file_stem().unwrap().to_string_lossy().into_owned(),
            path: path.to_path_buf(),
            target_column: target.into(),
            declared_rows: rows,
            declared_cols: cols,
            source: "test".into(),
            url: None,
            license: None,
        }
    }

    /// Synthetic numeric table for tests that do not need CSV round-trips.
    pub(crate) fn numeric_table(id: &str, rows: usize, cols: usize) -> Table {
        let columns = (0..cols)
            .map(|j| Column {
                name: format!("f{j}"),
                kind: ColumnKind::Numeric,
                values: vec![0.0; rows],
                missing: vec![false; rows],
                raw: None,
            })
            .collect();
        Table {
            id: id.into(),
            columns,
            target: (0..rows).map(|i| i % 2).collect(),
            target_raw: None,
            class_labels: vec!["0".into(), "1".into()],
        }
    }

    #[test]
    fn loads_basic_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_csv(dir.path(), "t.csv", "a,b,y\n1,x,yes\n2.5,z,no\n3,x,yes\n");
        let t = load_csv(&manifest_for(&path, "y", 3, 3)).unwrap();
        assert_eq!(t.n_rows(), 3);
        assert_eq!(t.n_features(), 2);
        assert_eq!(t.columns[0].kind, ColumnKind::Numeric);
        assert_eq!(t.columns[0].values, vec![1.0, 2.5, 3.0]);
        assert_eq!(t.columns[1].kind, ColumnKind::Categorical);
        // Labels are code-assigned lexicographically: "no" -> 0, "yes" -> 1.
        assert_eq!(t.class_labels, vec!["no".to_string(), "yes".to_string()]);
        assert_eq!(t.target, vec![1, 0, 1]);
    }

    #[test]
    fn mixed_cells_make_column_categorical() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_csv(dir.path(), "t.csv", "a,y\n1.5,p\nx,q\n2,p\n");
        let t = load_csv(&manifest_for(&path, "y", 3, 2)).unwrap();
        assert_eq!(t.columns[0].kind, ColumnKind::Categorical);
    }

    #[test]
    fn shape_mismatch_is_input_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_csv(dir.path(), "t.csv", "a,y\n1,p\n2,q\n");
        let err = load_csv(&manifest_for(&path, "y", 10, 4)).unwrap_err();
        assert_eq!(err.exit_code(), crate::error::exit::INPUT);
    }

    #[test]
    fn missing_target_column_is_input_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_csv(dir.path(), "t.csv", "a,y\n1,p\n");
        assert!(load_csv(&manifest_for(&path, "label", 1, 2)).is_err());
    }

    #[test]
    fn ordinal_codes_follow_lexicographic_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_csv(dir.path(), "t.csv", "c,y\nred,p\nblue,q\nred,p\n");
        let t = ordinal_encode(&load_csv(&manifest_for(&path, "y", 3, 2)).unwrap());
        // blue -> 0, red -> 1.
        assert_eq!(t.columns[0].values, vec![1.0, 0.0, 1.0]);
    }

    #[test]
    fn ordinal_encode_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_csv(
            dir.path(),
            "t.csv",
            "c,n,y\nred,1,p\nblue,,q\n,3,p\ngreen,4.5,q\n",
        );
        let once = ordinal_encode(&load_csv(&manifest_for(&path, "y", 4, 3)).unwrap());
        let twice = ordinal_encode(&once);
        for (a, b) in once.columns.iter().zip(&twice.columns) {
            assert_eq!(a.values, b.values);
            assert_eq!(a.missing, b.missing);
        }
    }

    #[test]
    fn missing_cells_are_masked() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_csv(dir.path(), "t.csv", "a,y\n1,p\n,q\n3,p\n");
        let t = load_csv(&manifest_for(&path, "y", 3, 2)).unwrap();
        assert_eq!(t.columns[0].missing, vec![false, true, false]);
        assert_eq!(t.columns[0].values[1], 0.0);
    }

    #[test]
    fn merge_keeps_nine_largest_and_breaks_ties_lexicographically() {
        // 12 classes: three with count 100, eight with count 50, one with 10.
        // Nine keepers: the 100s plus the six lexicographically smallest 50s.
        let mut target = Vec::new();
        let mut class_labels = Vec::new();
        let counts = [100, 100, 100, 50, 50, 50, 50, 50, 50, 50, 50, 10];
        for (code, &n) in counts.iter().enumerate() {
            class_labels.push(format!("c{code:02}"));
            target.extend(std::iter::repeat(code).take(n));
        }
        let table = Table {
            id: "m".into(),
            columns: numeric_table("m", target.len(), 1).columns,
            target: target.clone(),
            target_raw: None,
            class_labels,
        };
        let merged = merge_rare_classes(&table);
        assert_eq!(merged.n_classes(), 10);
        // The 100s take ranks 0..2; the 50s tie and sort by label, so c03..c08
        // fill the remaining six slots while c09, c10 and the count-10 c11
        // merge.
        assert_eq!(
            merged.class_labels,
            vec!["c00", "c01", "c02", "c03", "c04", "c05", "c06", "c07", "c08", "(merged)"]
        );
        // Ranks here coincide with the old codes, so kept classes keep their
        // code and c09, c10, c11 all land on the merged code.
        let merged_code = MAX_CLASSES - 1;
        for (&old, &new) in target.iter().zip(&merged.target) {
            if old <= 8 {
                assert_eq!(new, old);
            } else {
                assert_eq!(new, merged_code);
            }
        }
    }

    #[test]
    fn merge_is_identity_within_limit() {
        let t = numeric_table("t", 8, 2);
        let merged = merge_rare_classes(&t);
        assert_eq!(merged.target, t.target);
        assert_eq!(merged.class_labels, t.class_labels);
    }

    #[test]
    fn caps_bind_on_rows_and_cells() {
        // 50,000 x 10 with the standard caps: cell cap allows 40,000 rows,
        // row cap allows 20,000, so 20,000 wins.
        assert_eq!(row_budget(50_000, 10, 20_000, 400_000).unwrap(), 20_000);
        // Cell cap binds: 100 columns -> 4,000 rows.
        assert_eq!(row_budget(50_000, 100, 20_000, 400_000).unwrap(), 4_000);
        // No cap binds.
        assert_eq!(row_budget(100, 3, 20_000, 400_000).unwrap(), 100);
        // Zero budget errors.
        assert!(row_budget(10, 500_000, 20_000, 400_000).is_err());
    }

    #[test]
    fn apply_caps_samples_deterministically_and_preserves_order() {
        let t = {
            let mut t = numeric_table("t", 100, 2);
            for (i, v) in t.columns[0].values.iter_mut().enumerate() {
                *v = i as f64;
            }
            t
        };
        let a = apply_caps(&t, 10, 400_000, 7).unwrap();
        let b = apply_caps(&t, 10, 400_000, 7).unwrap();
        assert_eq!(a.columns[0].values, b.columns[0].values);
        assert_eq!(a.n_rows(), 10);
        let mut sorted = a.columns[0].values.clone();
        sorted.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_eq!(a.columns[0].values, sorted, "row order not preserved");
        let c = apply_caps(&t, 10, 400_000, 8).unwrap();
        assert_ne!(a.columns[0].values, c.columns[0].values, "seed ignored");
    }

    #[test]
    fn apply_caps_is_identity_under_budget() {
        let t = numeric_table("t", 50, 2);
        let capped = apply_caps(&t, 100, 400_000, 3).unwrap();
        assert_eq!(capped.n_rows(), 50);
    }

    #[test]
    fn split_respects_fraction_and_covers_rows() {
        let s = context_query_split(10, 0.6, 1).unwrap();
        assert_eq!(s.context.len(), 6);
        assert_eq!(s.query.len(), 4);
        let mut all: Vec<usize> = s.context.iter().chain(&s.query).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn split_clamps_to_keep_both_sides_non_empty() {
        let s = context_query_split(2, 0.0, 1).unwrap();
        assert_eq!((s.context.len(), s.query.len()), (1, 1));
        let s = context_query_split(3, 1.0, 1).unwrap();
        assert_eq!((s.context.len(), s.query.len()), (2, 1));
        assert!(context_query_split(1, 0.6, 1).is_err());
    }

    #[test]
    fn split_is_deterministic_in_seed() {
        let a = context_query_split(50, 0.6, 9).unwrap();
        let b = context_query_split(50, 0.6, 9).unwrap();
        assert_eq!(a, b);
        let c = context_query_split(50, 0.6, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn znormalize_uses_population_std_from_context_only() {
        let mut ctx = ndarray::arr2(&[[1.0], [2.0], [3.0]]);
        let mut qry = ndarray::arr2(&[[2.0], [4.0]]);
        let ctx_miss = Array2::from_elem((3, 1), false);
        let qry_miss = Array2::from_elem((2, 1), false);
        let stats = znormalize(&mut ctx, &ctx_miss, &mut qry, &qry_miss);
        // Population std of [1,2,3] is sqrt(2/3).
        let expect = [-1.224744871391589, 0.0, 1.224744871391589];
        for (got, want) in ctx.column(0).iter().zip(expect) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
        assert!((stats.mean[0] - 2.0).abs() < 1e-15);
        // Query normalized with context stats, not its own.
        assert!((qry[[0, 0]] - 0.0).abs() < 1e-12);
        assert!((qry[[1, 0]] - 2.449489742783178).abs() < 1e-12);
    }

    #[test]
    fn znormalize_zeroes_constant_and_missing() {
        let mut ctx = ndarray::arr2(&[[5.0, 1.0], [5.0, 0.0], [5.0, 3.0]]);
        let mut qry = ndarray::arr2(&[[7.0, 2.0]]);
        let mut ctx_miss = Array2::from_elem((3, 2), false);
        ctx_miss[[1, 1]] = true;
        let qry_miss = Array2::from_elem((1, 2), false);
        znormalize(&mut ctx, &ctx_miss, &mut qry, &qry_miss);
        // Constant column: all zeros, including the query side.
        for i in 0..3 {
            assert_eq!(ctx[[i, 0]], 0.0);
        }
        assert_eq!(qry[[0, 0]], 0.0);
        // Missing cell zero-filled; stats from the two present cells (1, 3).
        assert_eq!(ctx[[1, 1]], 0.0);
        assert!((ctx[[0, 1]] + 1.0).abs() < 1e-12);
        assert!((ctx[[2, 1]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn canonical_cells_unify_numeric_spellings() {
        let col = Column {
            name: "a".into(),
            kind: ColumnKind::Categorical,
            values: vec![0.0; 4],
            missing: vec![false, false, false, true],
            raw: Some(vec!["1.50".into(), "-0".into(), "x y".into(), "".into()]),
        };
        assert_eq!(col.canonical_cell(0), "1.5");
        assert_eq!(col.canonical_cell(1), "0");
        assert_eq!(col.canonical_cell(2), "x y");
        assert_eq!(col.canonical_cell(3), "");
    }
}
