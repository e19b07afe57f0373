//! Synthetic classification tasks for base pre-training. A task is an
//! ordinary `Table`, so the same preprocessing and batching path serves both
//! synthetic and real data. Task `index` under a fixed seed is the identity:
//! the stream is random-access and bit-reproducible.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_for, Stream};
use crate::table::{Column, ColumnKind, Table, MAX_CLASSES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    RandomLinear,
    RandomMlp,
    RandomTree,
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Family::RandomLinear => "random-linear",
            Family::RandomMlp => "random-mlp",
            Family::RandomTree => "random-tree",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    pub family: Family,
    pub max_features: usize,
    pub max_classes: usize,
    /// Inclusive row-count range per task.
    pub rows_per_task: (usize, usize),
    /// Label noise: logit jitter scale for linear/mlp, flip probability for
    /// trees.
    pub noise: f64,
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_features == 0 {
            return Err(Error::Config("prior.max_features must be at least 1".into()));
        }
        if !(2..=MAX_CLASSES).contains(&self.max_classes) {
            return Err(Error::Config(format!(
                "prior.max_classes must be in 2..={MAX_CLASSES}"
            )));
        }
        let (lo, hi) = self.rows_per_task;
        if lo < 4 || lo > hi {
            return Err(Error::Config(
                "prior.rows_per_task must be a non-empty range starting at 4 or more".into(),
            ));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::Config("prior.noise must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Tasks whose label draw collapses to one class are re-drawn; a prior this
/// degenerate is a configuration problem, not bad luck.
const MAX_RESAMPLE_ATTEMPTS: usize = 100;

pub fn sample_task(cfg: &PriorConfig, seed: u64, index: u64) -> Result<Table> {
    let mut rng = rng_for(seed, Stream::PriorTask, index);
    let n_rows = rng.random_range(cfg.rows_per_task.0..=cfg.rows_per_task.1);
    // Single-feature tasks are near-degenerate for every family; draw at
    // least two features whenever the cap allows it.
    let feature_lo = 2.min(cfg.max_features).max(1);
    let n_features = rng.random_range(feature_lo..=cfg.max_features);
    let n_classes = rng.random_range(2..=cfg.max_classes);

    for _ in 0..MAX_RESAMPLE_ATTEMPTS {
        let x = normal_matrix(&mut rng, n_rows, n_features);
        let labels = match cfg.family {
            Family::RandomLinear => linear_labels(&mut rng, &x, n_classes, cfg.noise),
            Family::RandomMlp => mlp_labels(&mut rng, &x, n_classes, cfg.noise),
            Family::RandomTree => tree_labels(&mut rng, &x, n_classes, cfg.noise),
        };
        let distinct: std::collections::BTreeSet<usize> = labels.iter().copied().collect();
        if distinct.len() >= 2 {
            return Ok(assemble(cfg.family, index, x, labels, n_classes));
        }
    }
    Err(Error::Internal(format!(
        "prior produced a single-class task {MAX_RESAMPLE_ATTEMPTS} times in a row \
         (family {}, {n_rows} rows, {n_classes} classes)",
        cfg.family
    )))
}

/// Unbounded random-access task stream over indices 0, 1, 2, ...
pub fn task_stream<'a>(
    cfg: &'a PriorConfig,
    seed: u64,
) -> impl Iterator<Item = Result<Table>> + 'a {
    (0u64..).map(move |index| sample_task(cfg, seed, index))
}

fn normal_matrix(rng: &mut ChaCha12Rng, rows: usize, cols: usize) -> Array2<f64> {
    let mut m = Array2::zeros((rows, cols));
    for v in m.iter_mut() {
        *v = rng.sample::<f64, _>(StandardNormal);
    }
    m
}

/// Argmax of a random affine map of the features, with Gaussian logit jitter.
fn linear_labels(rng: &mut ChaCha12Rng, x: &Array2<f64>, n_classes: usize, noise: f64) -> Vec<usize> {
    let f = x.ncols();
    let w = normal_matrix(rng, f, n_classes);
    let b: Vec<f64> = (0..n_classes).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let mut logits = x.dot(&w);
    for mut row in logits.rows_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v += b[j] + noise * rng.sample::<f64, _>(StandardNormal);
        }
    }
    argmax_rows(&logits)
}

/// One-hidden-layer tanh network with random weights.
fn mlp_labels(rng: &mut ChaCha12Rng, x: &Array2<f64>, n_classes: usize, noise: f64) -> Vec<usize> {
    let f = x.ncols();
    let hidden = rng.random_range(4..=16);
    let w1 = normal_matrix(rng, f, hidden).mapv(|v| v / (f as f64).sqrt());
    let b1: Vec<f64> = (0..hidden).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let w2 = normal_matrix(rng, hidden, n_classes).mapv(|v| v / (hidden as f64).sqrt());
    let b2: Vec<f64> = (0..n_classes).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let mut h = x.dot(&w1);
    for mut row in h.rows_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v + b1[j]).tanh();
        }
    }
    let mut logits = h.dot(&w2);
    for mut row in logits.rows_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v += b2[j] + noise * rng.sample::<f64, _>(StandardNormal);
        }
    }
    argmax_rows(&logits)
}

/// Random axis-aligned decision tree; noise flips a label to a uniformly
/// random class.
fn tree_labels(rng: &mut ChaCha12Rng, x: &Array2<f64>, n_classes: usize, noise: f64) -> Vec<usize> {
    let depth = rng.random_range(2..=4usize);
    let n_internal = (1 << depth) - 1;
    let n_leaves = 1 << depth;
    let features: Vec<usize> = (0..n_internal).map(|_| rng.random_range(0..x.ncols())).collect();
    let thresholds: Vec<f64> = (0..n_internal).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let leaves: Vec<usize> = (0..n_leaves).map(|_| rng.random_range(0..n_classes)).collect();
    x.rows()
        .into_iter()
        .map(|row| {
            let mut node = 0usize;
            for _ in 0..depth {
                node = if row[features[node]] <= thresholds[node] {
                    2 * node + 1
                } else {
                    2 * node + 2
                };
            }
            let leaf = leaves[node - n_internal];
            if noise > 0.0 && rng.random_range(0.0..1.0) < noise {
                rng.random_range(0..n_classes)
            } else {
                leaf
            }
        })
        .collect()
}

fn argmax_rows(m: &Array2<f64>) -> Vec<usize> {
    m.rows()
        .into_iter()
        .map(|row| {
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

fn assemble(family: Family, index: u64, x: Array2<f64>, labels: Vec<usize>, n_classes: usize) -> Table {
    let columns = (0..x.ncols())
        .map(|j| Column {
            name: format!("f{j}"),
            kind: ColumnKind::Numeric,
            values: x.column(j).to_vec(),
            missing: vec![false; x.nrows()],
            raw: None,
        })
        .collect();
    Table {
        id: format!("prior-{family}-{index}"),
        columns,
        target: labels,
        target_raw: None,
        class_labels: (0..n_classes).map(|c| c.to_string()).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(family: Family, noise: f64, max_classes: usize) -> PriorConfig {
        PriorConfig {
            family,
            max_features: 6,
            max_classes,
            rows_per_task: (40, 80),
            noise,
        }
    }

    #[test]
    fn identical_seed_and_index_reproduce_the_task() {
        for family in [Family::RandomLinear, Family::RandomMlp, Family::RandomTree] {
            let a = sample_task(&cfg(family, 0.1, 4), 7, 3).unwrap();
            let b = sample_task(&cfg(family, 0.1, 4), 7, 3).unwrap();
            assert_eq!(a.target, b.target);
            for (ca, cb) in a.columns.iter().zip(&b.columns) {
                assert_eq!(ca.values, cb.values);
            }
            let c = sample_task(&cfg(family, 0.1, 4), 7, 4).unwrap();
            let differs = a.target != c.target
                || a.columns.len() != c.columns.len()
                || a.columns[0].values != c.columns[0].values;
            assert!(differs, "index must change the task");
        }
    }

    #[test]
    fn every_task_has_at_least_two_classes() {
        for family in [Family::RandomLinear, Family::RandomMlp, Family::RandomTree] {
            for index in 0..200 {
                let t = sample_task(&cfg(family, 0.05, 3), 11, index).unwrap();
                let distinct: std::collections::BTreeSet<usize> = t.target.iter().copied().collect();
                assert!(distinct.len() >= 2, "{family} task {index} degenerate");
                assert!(t.target.iter().all(|&c| c < t.n_classes()));
            }
        }
    }

    #[test]
    fn noise_free_linear_tasks_are_separable_by_perceptron() {
        // Independent oracle: for a 2-class argmax-of-affine labeling the
        // difference row w_0 - w_1 is a separating hyperplane, so the
        // perceptron must reach zero training errors.
        let config = cfg(Family::RandomLinear, 0.0, 2);
        for index in 0..20 {
            let t = sample_task(&config, 5, index).unwrap();
            let (x, _) = t.feature_matrix(&(0..t.n_rows()).collect::<Vec<_>>());
            let y: Vec<f64> = t.target.iter().map(|&c| if c == 0 { 1.0 } else { -1.0 }).collect();
            let mut w = vec![0.0; x.ncols()];
            let mut b = 0.0;
            let mut converged = false;
            for _ in 0..20_000 {
                let mut errors = 0;
                for i in 0..x.nrows() {
                    let score: f64 = (0..x.ncols()).map(|j| w[j] * x[[i, j]]).sum::<f64>() + b;
                    if y[i] * score <= 0.0 {
                        for j in 0..x.ncols() {
                            w[j] += y[i] * x[[i, j]];
                        }
                        b += y[i];
                        errors += 1;
                    }
                }
                if errors == 0 {
                    converged = true;
                    break;
                }
            }
            assert!(converged, "task {index} not linearly separable");
        }
    }

    #[test]
    fn binary_linear_tasks_are_roughly_balanced_on_average() {
        let config = cfg(Family::RandomLinear, 0.0, 2);
        let mut total = 0.0;
        let n_tasks = 200;
        for index in 0..n_tasks {
            let t = sample_task(&config, 13, index).unwrap();
            let ones = t.target.iter().filter(|&&c| c == 1).count();
            total += ones as f64 / t.n_rows() as f64;
        }
        let mean = total / n_tasks as f64;
        assert!((0.2..=0.8).contains(&mean), "mean balance {mean}");
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let mut c = cfg(Family::RandomLinear, 0.1, 4);
        c.max_classes = 1;
        assert!(c.validate().is_err());
        let mut c = cfg(Family::RandomLinear, 0.1, 4);
        c.max_classes = 11;
        assert!(c.validate().is_err());
        let mut c = cfg(Family::RandomLinear, 0.1, 4);
        c.rows_per_task = (50, 40);
        assert!(c.validate().is_err());
        let mut c = cfg(Family::RandomLinear, 0.1, 4);
        c.noise = -0.5;
        assert!(c.validate().is_err());
        assert!(cfg(Family::RandomTree, 0.0, 10).validate().is_ok());
    }

    #[test]
    fn task_stream_matches_random_access() {
        let config = cfg(Family::RandomTree, 0.1, 5);
        let streamed: Vec<Table> = task_stream(&config, 3).take(5).map(|t| t.unwrap()).collect();
        for (i, t) in streamed.iter().enumerate() {
            let direct = sample_task(&config, 3, i as u64).unwrap();
            assert_eq!(t.target, direct.target);
        }
    }
}
