//! Evaluation harness: stratified 10-fold cross-validation per dataset, the
//! five-metric suite, per-dataset score normalization across methods,
//! pairwise Wilcoxon comparisons, and the context-size / data-source
//! ablation runners.
//!
//! Everything here is deterministic given (parameters, suite, seeds); wall
//! times are logged but never written into report files, so re-running a
//! report on identical inputs produces identical bytes. A `time` column is
//! still rendered for methods whose timings were ingested from a baselines
//! file.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::manifest::DatasetManifest;
use crate::metrics::{accuracy, cross_entropy, ece, f1_macro, roc_auc_binary, roc_auc_ovr};
use crate::model::{predict_proba, Batch, ModelConfig};
use crate::rng::{derive_seed, rng_for, Stream};
use crate::stats::wilcoxon_signed_rank;
use crate::table::{load_csv_from, merge_rare_classes, ordinal_encode, row_budget, Split, Table};
use crate::train::{continue_pretrain, TrainConfig};

/// One fold's (or one dataset's aggregated) metric values. `roc_auc` is NaN
/// for a fold whose query rows collapse to a single class; NaN entries are
/// excluded from means and serialize as null. `wall_time_s` is only ever
/// present for scores ingested from a baselines file.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct MetricSet {
    pub roc_auc: f64,
    pub accuracy: f64,
    pub f1_macro: f64,
    pub cross_entropy: f64,
    pub ece: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

pub const METRIC_NAMES: [&str; 5] = ["roc_auc", "accuracy", "f1_macro", "cross_entropy", "ece"];

/// True when larger values of the named metric are better.
pub fn higher_is_better(metric: &str) -> bool {
    !matches!(metric, "cross_entropy" | "ece")
}

impl MetricSet {
    pub fn get(&self, metric: &str) -> f64 {
        match metric {
            "roc_auc" => self.roc_auc,
            "accuracy" => self.accuracy,
            "f1_macro" => self.f1_macro,
            "cross_entropy" => self.cross_entropy,
            "ece" => self.ece,
            other => panic!("unknown metric {other}"),
        }
    }

    fn set(&mut self, metric: &str, value: f64) {
        match metric {
            "roc_auc" => self.roc_auc = value,
            "accuracy" => self.accuracy = value,
            "f1_macro" => self.f1_macro = value,
            "cross_entropy" => self.cross_entropy = value,
            "ece" => self.ece = value,
            other => panic!("unknown metric {other}"),
        }
    }

    fn nan() -> MetricSet {
        MetricSet {
            roc_auc: f64::NAN,
            accuracy: f64::NAN,
            f1_macro: f64::NAN,
            cross_entropy: f64::NAN,
            ece: f64::NAN,
            wall_time_s: None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DatasetEval {
    pub dataset_id: String,
    /// Per-fold metrics, index = fold.
    pub folds: Vec<MetricSet>,
    /// Fold means; NaN folds excluded per metric.
    pub mean: MetricSet,
    /// Standard error of the fold mean.
    pub stderr: MetricSet,
}

/// Class-stratified k-fold partition. Per class, member rows are shuffled
/// with a class-indexed stream of `seed` and dealt round-robin into folds;
/// the dealing cursor persists across classes so remainders spread evenly.
/// Classes with fewer than k members are distributed as far as they go and
/// a warning is emitted, since some folds will lack them.
pub fn stratified_kfold(labels: &[usize], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::Config(format!("k-fold needs k >= 2, got {k}")));
    }
    if labels.len() < k {
        return Err(Error::Input(format!(
            "cannot make {k} folds from {} rows",
            labels.len()
        )));
    }
    let classes: BTreeSet<usize> = labels.iter().copied().collect();
    let mut folds = vec![Vec::new(); k];
    let mut cursor = 0usize;
    for class in classes {
        let mut members: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect();
        if members.len() < k {
            log::warn!(
                "class {class} has only {} members; some of the {k} folds will lack it",
                members.len()
            );
        }
        let mut rng = rng_for(seed, Stream::FoldShuffle, class as u64);
        use rand::seq::SliceRandom;
        members.shuffle(&mut rng);
        for idx in members {
            folds[cursor].push(idx);
            cursor = (cursor + 1) % k;
        }
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }
    Ok(folds)
}

/// Evaluation-side context budget: all rows outside the fold, subsampled
/// uniformly (order-preserving) if the row/cell caps bind.
fn capped_context(
    all_context: &[usize],
    n_features: usize,
    max_rows: usize,
    max_cells: usize,
    seed: u64,
    fold: u64,
) -> Result<Vec<usize>> {
    let budget = row_budget(all_context.len(), n_features, max_rows, max_cells)?;
    if budget >= all_context.len() {
        return Ok(all_context.to_vec());
    }
    let mut rng = rng_for(seed, Stream::RowSubsample, fold);
    let mut picks: Vec<usize> =
        rand::seq::index::sample(&mut rng, all_context.len(), budget).into_vec();
    picks.sort_unstable();
    Ok(picks.iter().map(|&i| all_context[i]).collect())
}

#[derive(Clone, Copy, Debug)]
pub struct EvalProtocol {
    pub k: usize,
    pub max_context_rows: usize,
    pub max_cells: usize,
}

/// Renormalize full-head probabilities over the task's first `n_classes`
/// outputs; the remaining head slots are padding for this task.
fn task_proba(full: &ndarray::Array2<f64>, n_classes: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(full.nrows());
    for row in full.rows() {
        let mut p: Vec<f64> = row.iter().take(n_classes).copied().collect();
        let sum: f64 = p.iter().sum();
        if sum > 0.0 {
            for v in &mut p {
                *v /= sum;
            }
        }
        out.push(p);
    }
    out
}

fn argmax(p: &[f64]) -> usize {
    p.iter()
        .copied()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap()
}

/// Cross-validate one model on one preprocessed table. The fold split and
/// any context subsampling derive from `seed`; identical inputs give
/// identical results bit for bit.
pub fn evaluate_table(
    model: &ModelConfig,
    params: &[f64],
    table: &Table,
    proto: &EvalProtocol,
    seed: u64,
) -> Result<DatasetEval> {
    let started = Instant::now();
    let labels = table.labels(&(0..table.n_rows()).collect::<Vec<_>>());
    let folds = stratified_kfold(&labels, proto.k, seed)?;
    let mut fold_metrics = Vec::with_capacity(folds.len());
    for (f, fold_rows) in folds.iter().enumerate() {
        if fold_rows.is_empty() {
            // Possible when k is close to n; an empty query fold measures
            // nothing and is skipped whole.
            log::warn!("dataset {}: fold {f} is empty, skipping", table.id);
            fold_metrics.push(MetricSet::nan());
            continue;
        }
        let in_fold: BTreeSet<usize> = fold_rows.iter().copied().collect();
        let context_all: Vec<usize> =
            (0..table.n_rows()).filter(|r| !in_fold.contains(r)).collect();
        let context = capped_context(
            &context_all,
            table.n_features(),
            proto.max_context_rows,
            proto.max_cells,
            derive_seed(seed, Stream::RowSubsample, f as u64),
            f as u64,
        )?;
        let split = Split { context, query: fold_rows.clone() };
        let batch = Batch::from_table(table, &split, model.max_features)?;
        let full = predict_proba(model, params, &batch);
        let proba = task_proba(&full, batch.n_classes);
        let y = &batch.y_query;
        let preds: Vec<usize> = proba.iter().map(|p| argmax(p)).collect();
        let auc = if batch.n_classes == 2 {
            let binary: Vec<bool> = y.iter().map(|&l| l == 1).collect();
            let scores: Vec<f64> = proba.iter().map(|p| p[1]).collect();
            roc_auc_binary(&binary, &scores)
        } else {
            roc_auc_ovr(y, &proba, batch.n_classes)
        };
        let roc = match auc {
            Ok(v) => v,
            Err(e) => {
                log::warn!("dataset {} fold {f}: auc undefined ({e}); excluded from the mean", table.id);
                f64::NAN
            }
        };
        fold_metrics.push(MetricSet {
            roc_auc: roc,
            accuracy: accuracy(y, &preds),
            f1_macro: f1_macro(y, &preds),
            cross_entropy: cross_entropy(y, &proba),
            ece: ece(y, &proba),
            wall_time_s: None,
        });
    }
    let (mean, stderr) = summarize_folds(&table.id, &fold_metrics)?;
    log::info!(
        "evaluated {} ({} folds) in {:.2}s",
        table.id,
        fold_metrics.len(),
        started.elapsed().as_secs_f64()
    );
    Ok(DatasetEval { dataset_id: table.id.clone(), folds: fold_metrics, mean, stderr })
}

fn summarize_folds(dataset: &str, folds: &[MetricSet]) -> Result<(MetricSet, MetricSet)> {
    let mut mean = MetricSet::nan();
    let mut stderr = MetricSet::nan();
    for metric in METRIC_NAMES {
        let values: Vec<f64> =
            folds.iter().map(|m| m.get(metric)).filter(|v| v.is_finite()).collect();
        if values.is_empty() {
            return Err(Error::Input(format!(
                "dataset {dataset}: metric {metric} undefined on every fold"
            )));
        }
        let n = values.len() as f64;
        let m = values.iter().sum::<f64>() / n;
        mean.set(metric, m);
        if values.len() > 1 {
            let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
            stderr.set(metric, (var / n).sqrt());
        } else {
            stderr.set(metric, 0.0);
        }
    }
    Ok((mean, stderr))
}

/// Cross-validate a model on every table of a suite.
pub fn evaluate_suite(
    model: &ModelConfig,
    params: &[f64],
    suite: &[Table],
    proto: &EvalProtocol,
    seed: u64,
) -> Result<Vec<DatasetEval>> {
    if suite.is_empty() {
        return Err(Error::Input("evaluation suite is empty".into()));
    }
    let mut out = Vec::with_capacity(suite.len());
    for (i, table) in suite.iter().enumerate() {
        out.push(evaluate_table(
            model,
            params,
            table,
            proto,
            derive_seed(seed, Stream::FoldShuffle, i as u64),
        )?);
    }
    Ok(out)
}

/// Load and preprocess an evaluation suite. Unlike training-corpus loading,
/// any unreadable dataset is a hard error: evaluating on a silently shrunken
/// suite would misrepresent results.
pub fn prepare_suite(datasets: &[DatasetManifest], base_dir: &Path) -> Result<Vec<Table>> {
    let mut tables = Vec::with_capacity(datasets.len());
    for m in datasets {
        let path = if m.path.is_absolute() { m.path.clone() } else { base_dir.join(&m.path) };
        let t = load_csv_from(&path, m)?;
        tables.push(merge_rare_classes(&ordinal_encode(&t)));
    }
    Ok(tables)
}

/// Per-dataset min-max normalization of one metric across methods: best
/// method maps to 1.0, worst to 0.0; for error-type metrics the orientation
/// is flipped so 1.0 is still best. All methods tied → all 1.0 (each attains
/// the best score).
pub fn normalize_scores(
    scores: &BTreeMap<String, f64>,
    metric: &str,
) -> Result<BTreeMap<String, f64>> {
    if scores.len() < 2 {
        return Err(Error::Input(format!(
            "normalization needs at least 2 methods, got {}",
            scores.len()
        )));
    }
    let lo = scores.values().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.values().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = BTreeMap::new();
    for (method, &s) in scores {
        let v = if hi == lo {
            1.0
        } else if higher_is_better(metric) {
            (s - lo) / (hi - lo)
        } else {
            (hi - s) / (hi - lo)
        };
        out.insert(method.clone(), v);
    }
    Ok(out)
}

/// Scores ingested from a baselines file: method → dataset → metrics.
pub type BaselineScores = BTreeMap<String, BTreeMap<String, MetricSet>>;

/// Parse a line-delimited baselines file with whitespace-separated fields
/// `method dataset_id metric value`. `#` starts a comment. Metric names are
/// the five metric columns plus `time`; listing the same (method, dataset,
/// metric) twice is an error.
pub fn parse_baselines(text: &str) -> Result<BaselineScores> {
    let mut out: BaselineScores = BTreeMap::new();
    let mut seen: BTreeSet<(String, String, String)> = BTreeSet::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 4 {
            return Err(Error::Input(format!(
                "baselines line {}: expected `method dataset metric value`, got {} fields",
                lineno + 1,
                parts.len()
            )));
        }
        let (method, dataset, metric, value) = (parts[0], parts[1], parts[2], parts[3]);
        if metric != "time" && !METRIC_NAMES.contains(&metric) {
            return Err(Error::Input(format!(
                "baselines line {}: unknown metric {metric}",
                lineno + 1
            )));
        }
        let value: f64 = value.parse().map_err(|_| {
            Error::Input(format!("baselines line {}: bad value {value}", lineno + 1))
        })?;
        if !seen.insert((method.to_string(), dataset.to_string(), metric.to_string())) {
            return Err(Error::Input(format!(
                "baselines line {}: duplicate entry for ({method}, {dataset}, {metric})",
                lineno + 1
            )));
        }
        let set = out
            .entry(method.to_string())
            .or_default()
            .entry(dataset.to_string())
            .or_insert_with(MetricSet::nan);
        if metric == "time" {
            set.wall_time_s = Some(value);
        } else {
            set.set(metric, value);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct MethodEval {
    pub method: String,
    pub datasets: Vec<DatasetEval>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PairwiseTest {
    pub method_a: String,
    pub method_b: String,
    /// Paired on per-dataset mean ROC-AUC over the common suite.
    pub n_datasets: usize,
    pub w_plus: f64,
    pub p_value: f64,
    pub exact: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    /// Dataset ids common to every method; normalization pool and Wilcoxon
    /// pairs are computed on exactly this set.
    pub common_datasets: Vec<String>,
    /// method → dataset → fold-mean metrics (or file-ingested values).
    pub raw: BTreeMap<String, BTreeMap<String, MetricSet>>,
    /// Per-fold detail for live-evaluated methods.
    pub fold_detail: Vec<MethodEval>,
    /// metric → dataset → method → normalized score in [0,1].
    pub normalized: BTreeMap<String, BTreeMap<String, BTreeMap<String, f64>>>,
    /// metric → method → mean normalized score over the common suite.
    pub mean_normalized: BTreeMap<String, BTreeMap<String, f64>>,
    pub wilcoxon: Vec<PairwiseTest>,
    /// Free-form echo of the run configuration for provenance.
    pub config_echo: String,
}

/// Merge live evaluations with optional file-ingested baselines into the
/// full report: per-dataset normalization across methods, mean normalized
/// scores, and pairwise Wilcoxon tests on per-dataset mean ROC-AUC.
pub fn aggregate_report(
    live: &[MethodEval],
    baselines: Option<&BaselineScores>,
    config_echo: &str,
) -> Result<EvalReport> {
    let mut raw: BTreeMap<String, BTreeMap<String, MetricSet>> = BTreeMap::new();
    for m in live {
        let mut per_dataset = BTreeMap::new();
        for d in &m.datasets {
            if per_dataset.insert(d.dataset_id.clone(), d.mean).is_some() {
                return Err(Error::Input(format!(
                    "method {} evaluated dataset {} twice",
                    m.method, d.dataset_id
                )));
            }
        }
        if raw.insert(m.method.clone(), per_dataset).is_some() {
            return Err(Error::Input(format!("duplicate method name {}", m.method)));
        }
    }
    if let Some(base) = baselines {
        for (method, per_dataset) in base {
            if raw.insert(method.clone(), per_dataset.clone()).is_some() {
                return Err(Error::Input(format!(
                    "baseline method {method} collides with a live method"
                )));
            }
        }
    }
    if raw.len() < 2 {
        return Err(Error::Input(
            "report needs at least 2 methods (add a baseline or a second checkpoint)".into(),
        ));
    }

    // Common dataset set across all methods.
    let mut iter = raw.values();
    let mut common: BTreeSet<String> = iter.next().unwrap().keys().cloned().collect();
    for per_dataset in iter {
        common.retain(|d| per_dataset.contains_key(d));
    }
    if common.is_empty() {
        return Err(Error::Input("methods share no datasets; nothing to compare".into()));
    }
    for (method, per_dataset) in &raw {
        for d in per_dataset.keys() {
            if !common.contains(d) {
                log::warn!("dataset {d} of method {method} missing elsewhere; dropped from the pool");
            }
        }
    }

    // Normalization: metric → dataset → method → [0,1].
    let mut normalized: BTreeMap<String, BTreeMap<String, BTreeMap<String, f64>>> = BTreeMap::new();
    for metric in METRIC_NAMES {
        let mut per_dataset_out = BTreeMap::new();
        for d in &common {
            let mut pool = BTreeMap::new();
            for (method, per_dataset) in &raw {
                let v = per_dataset[d].get(metric);
                if v.is_finite() {
                    pool.insert(method.clone(), v);
                }
            }
            if pool.len() < 2 {
                log::warn!("dataset {d}: metric {metric} defined for fewer than 2 methods; not normalized");
                continue;
            }
            per_dataset_out.insert(d.clone(), normalize_scores(&pool, metric)?);
        }
        normalized.insert(metric.to_string(), per_dataset_out);
    }

    // Mean normalized per method.
    let mut mean_normalized: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for metric in METRIC_NAMES {
        let mut per_method: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for per_method_scores in normalized[metric].values() {
            for (method, &v) in per_method_scores {
                let e = per_method.entry(method.clone()).or_insert((0.0, 0));
                e.0 += v;
                e.1 += 1;
            }
        }
        let collapsed: BTreeMap<String, f64> = per_method
            .into_iter()
            .map(|(m, (sum, n))| (m, sum / n as f64))
            .collect();
        mean_normalized.insert(metric.to_string(), collapsed);
    }

    // Pairwise Wilcoxon on per-dataset mean ROC-AUC over the common suite.
    let methods: Vec<String> = raw.keys().cloned().collect();
    let mut wilcoxon = Vec::new();
    for i in 0..methods.len() {
        for j in i + 1..methods.len() {
            let mut a = Vec::new();
            let mut b = Vec::new();
            for d in &common {
                let va = raw[&methods[i]][d].roc_auc;
                let vb = raw[&methods[j]][d].roc_auc;
                if va.is_finite() && vb.is_finite() {
                    a.push(va);
                    b.push(vb);
                }
            }
            if a.is_empty() {
                continue;
            }
            let r = wilcoxon_signed_rank(&a, &b)?;
            wilcoxon.push(PairwiseTest {
                method_a: methods[i].clone(),
                method_b: methods[j].clone(),
                n_datasets: a.len(),
                w_plus: r.w_plus,
                p_value: r.p_value,
                exact: r.exact,
            });
        }
    }

    Ok(EvalReport {
        common_datasets: common.into_iter().collect(),
        raw,
        fold_detail: live.to_vec(),
        normalized,
        mean_normalized,
        wilcoxon,
        config_echo: config_echo.to_string(),
    })
}

/// Machine output: one JSON record per line with a `record` discriminator.
/// Key order is fixed (BTreeMap + struct order), so identical reports render
/// identical bytes.
pub fn render_jsonl(report: &EvalReport) -> String {
    #[derive(Serialize)]
    struct Line<'a, T: Serialize> {
        record: &'a str,
        #[serde(flatten)]
        body: T,
    }
    fn push<T: Serialize>(out: &mut String, record: &str, body: T) {
        let line = serde_json::to_string(&Line { record, body }).expect("report serializes");
        out.push_str(&line);
        out.push('\n');
    }

    let mut out = String::new();
    push(&mut out, "config", serde_json::json!({ "echo": report.config_echo }));
    push(
        &mut out,
        "common_datasets",
        serde_json::json!({ "datasets": report.common_datasets }),
    );
    for m in &report.fold_detail {
        for d in &m.datasets {
            for (fold, metrics) in d.folds.iter().enumerate() {
                push(
                    &mut out,
                    "fold",
                    serde_json::json!({
                        "method": m.method,
                        "dataset": d.dataset_id,
                        "fold": fold,
                        "metrics": metrics,
                    }),
                );
            }
            push(
                &mut out,
                "dataset_summary",
                serde_json::json!({
                    "method": m.method,
                    "dataset": d.dataset_id,
                    "mean": d.mean,
                    "stderr": d.stderr,
                }),
            );
        }
    }
    for (method, per_dataset) in &report.raw {
        for (dataset, metrics) in per_dataset {
            push(
                &mut out,
                "raw_mean",
                serde_json::json!({ "method": method, "dataset": dataset, "metrics": metrics }),
            );
        }
    }
    for (metric, per_dataset) in &report.normalized {
        for (dataset, per_method) in per_dataset {
            push(
                &mut out,
                "normalized",
                serde_json::json!({ "metric": metric, "dataset": dataset, "scores": per_method }),
            );
        }
    }
    for (metric, per_method) in &report.mean_normalized {
        push(
            &mut out,
            "mean_normalized",
            serde_json::json!({ "metric": metric, "scores": per_method }),
        );
    }
    for t in &report.wilcoxon {
        push(&mut out, "wilcoxon", t);
    }
    out
}

fn fmt_cell(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.4}")
    } else {
        "-".to_string()
    }
}

/// Human output: aligned per-method table over the common suite with the
/// metric columns in fixed order, one normalized-ROC summary column, and the
/// pairwise test section.
pub fn render_table(report: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "datasets in pool: {}", report.common_datasets.len());
    let _ = writeln!(
        out,
        "{:<24} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>10}",
        "method", "ROC", "Acc.", "F1", "CE", "ECE", "time", "norm. ROC"
    );
    for (method, per_dataset) in &report.raw {
        let mut mean = MetricSet::nan();
        for metric in METRIC_NAMES {
            let vals: Vec<f64> = report
                .common_datasets
                .iter()
                .map(|d| per_dataset[d].get(metric))
                .filter(|v| v.is_finite())
                .collect();
            if !vals.is_empty() {
                mean.set(metric, vals.iter().sum::<f64>() / vals.len() as f64);
            }
        }
        let time: Vec<f64> = report
            .common_datasets
            .iter()
            .filter_map(|d| per_dataset[d].wall_time_s)
            .collect();
        let time_cell = if time.len() == report.common_datasets.len() {
            format!("{:.2}", time.iter().sum::<f64>())
        } else {
            "-".to_string()
        };
        let norm = report
            .mean_normalized
            .get("roc_auc")
            .and_then(|m| m.get(method))
            .copied()
            .unwrap_or(f64::NAN);
        let _ = writeln!(
            out,
            "{:<24} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>10}",
            method,
            fmt_cell(mean.roc_auc),
            fmt_cell(mean.accuracy),
            fmt_cell(mean.f1_macro),
            fmt_cell(mean.cross_entropy),
            fmt_cell(mean.ece),
            time_cell,
            fmt_cell(norm),
        );
    }
    if !report.wilcoxon.is_empty() {
        let _ = writeln!(out);
        let _ = writeln!(out, "pairwise Wilcoxon signed-rank on per-dataset mean ROC-AUC:");
        for t in &report.wilcoxon {
            let _ = writeln!(
                out,
                "  {} vs {}: p = {} over {} datasets ({})",
                t.method_a,
                t.method_b,
                fmt_cell(t.p_value),
                t.n_datasets,
                if t.exact { "exact" } else { "normal approximation" },
            );
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationKind {
    ContextSize,
    DataSource,
}

/// One stage-2 configuration under test: a training config plus its corpus.
#[derive(Clone)]
pub struct AblationArm {
    pub name: String,
    pub train: TrainConfig,
    pub corpus: Vec<Table>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SeedDelta {
    pub seed: u64,
    pub base_auc: f64,
    pub arm_auc: f64,
    pub delta: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ArmResult {
    pub name: String,
    /// Human-readable value of the ablated factor.
    pub factor: String,
    pub per_seed: Vec<SeedDelta>,
    pub mean_delta: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationReport {
    pub kind: AblationKind,
    pub arms: Vec<ArmResult>,
}

fn corpus_ids(corpus: &[Table]) -> Vec<String> {
    corpus.iter().map(|t| t.id.clone()).collect()
}

/// Arms must differ in the ablated factor and nowhere else; anything else
/// would confound the comparison.
fn validate_arms(kind: AblationKind, arms: &[AblationArm]) -> Result<()> {
    if arms.len() < 2 {
        return Err(Error::Config("ablation needs at least 2 configurations".into()));
    }
    let mut factors = BTreeSet::new();
    for arm in arms {
        let factor = match kind {
            AblationKind::ContextSize => format!("rows={}", arm.train.max_context_rows),
            AblationKind::DataSource => format!("corpus={:?}", corpus_ids(&arm.corpus)),
        };
        if !factors.insert(factor.clone()) {
            return Err(Error::Config(format!(
                "ablation arms {factor} are identical in the ablated factor"
            )));
        }
        // Outside the ablated factor everything must match the first arm.
        let mut a = arm.train.clone();
        let mut b = arms[0].train.clone();
        match kind {
            AblationKind::ContextSize => {
                a.max_context_rows = 0;
                b.max_context_rows = 0;
                if corpus_ids(&arm.corpus) != corpus_ids(&arms[0].corpus) {
                    return Err(Error::Config(
                        "context-size ablation arms must share one corpus".into(),
                    ));
                }
            }
            AblationKind::DataSource => {}
        }
        if a != b {
            return Err(Error::Config(format!(
                "arm {} differs from arm {} outside the ablated factor",
                arm.name, arms[0].name
            )));
        }
    }
    Ok(())
}

fn mean_auc(evals: &[DatasetEval]) -> f64 {
    let vals: Vec<f64> = evals.iter().map(|d| d.mean.roc_auc).filter(|v| v.is_finite()).collect();
    vals.iter().sum::<f64>() / vals.len() as f64
}

/// Run one ablation axis: per seed, continue pre-training from the same base
/// parameters under each arm, evaluate every resulting model and the base on
/// the same suite, and report per-arm AUC deltas against the base.
pub fn run_ablation(
    kind: AblationKind,
    model: &ModelConfig,
    base_params: &[f64],
    arms: &[AblationArm],
    suite: &[Table],
    proto: &EvalProtocol,
    seeds: &[u64],
) -> Result<AblationReport> {
    validate_arms(kind, arms)?;
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let mut results: Vec<ArmResult> = arms
        .iter()
        .map(|arm| ArmResult {
            name: arm.name.clone(),
            factor: match kind {
                AblationKind::ContextSize => format!("max_context_rows={}", arm.train.max_context_rows),
                AblationKind::DataSource => format!("corpus={}", corpus_ids(&arm.corpus).join("+")),
            },
            per_seed: Vec::new(),
            mean_delta: 0.0,
        })
        .collect();
    for &seed in seeds {
        let base_eval = evaluate_suite(model, base_params, suite, proto, seed)?;
        let base_auc = mean_auc(&base_eval);
        for (arm, result) in arms.iter().zip(&mut results) {
            let outcome = continue_pretrain(model, base_params, &arm.corpus, &arm.train, seed)?;
            let arm_eval = evaluate_suite(model, &outcome.params, suite, proto, seed)?;
            let arm_auc = mean_auc(&arm_eval);
            result.per_seed.push(SeedDelta { seed, base_auc, arm_auc, delta: arm_auc - base_auc });
        }
    }
    for r in &mut results {
        r.mean_delta = r.per_seed.iter().map(|s| s.delta).sum::<f64>() / r.per_seed.len() as f64;
    }
    Ok(AblationReport { kind, arms: results })
}

/// Machine rendering of an ablation report, one JSON line per arm.
pub fn render_ablation(report: &AblationReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{}",
        serde_json::json!({ "record": "ablation", "kind": report.kind })
    );
    for arm in &report.arms {
        let line = serde_json::to_string(&serde_json::json!({
            "record": "arm",
            "name": arm.name,
            "factor": arm.factor,
            "per_seed": arm.per_seed,
            "mean_delta": arm.mean_delta,
        }))
        .expect("arm serializes");
        out.push_str(&line);
        out.push('\n');
    }
    out
}
