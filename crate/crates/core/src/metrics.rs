//! Evaluation metrics. All metrics operate on plain slices so callers decide
//! the batching; every function is deterministic in its inputs.

use crate::error::{Error, Result};

/// Binary ROC-AUC via the rank statistic: AUC = (R⁺ − n⁺(n⁺+1)/2) / (n⁺ n⁻)
/// where R⁺ is the sum of positive ranks and tied scores share the average
/// rank. Equivalent to counting correctly ordered positive/negative pairs
/// with ties worth one half.
pub fn roc_auc_binary(labels: &[bool], scores: &[f64]) -> Result<f64> {
    if labels.len() != scores.len() {
        return Err(Error::Internal(format!(
            "auc: {} labels vs {} scores",
            labels.len(),
            scores.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numerical("auc: NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Input(
            "auc undefined: needs both a positive and a negative example".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    // Average ranks over runs of equal scores (1-based ranks).
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = ((i + 1 + j) as f64) / 2.0; // mean of ranks i+1 ..= j
        for &idx in &order[i..j] {
            if labels[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let n_pos_f = n_pos as f64;
    Ok((rank_sum_pos - n_pos_f * (n_pos_f + 1.0) / 2.0) / (n_pos_f * n_neg as f64))
}

/// Macro one-vs-rest multiclass AUC: the mean of binary AUCs treating each
/// class present in `labels` as the positive class scored by its own
/// probability column. Classes absent from `labels` are skipped.
pub fn roc_auc_ovr(labels: &[usize], proba: &[Vec<f64>], n_classes: usize) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Input("auc: no examples".into()));
    }
    if labels.len() != proba.len() {
        return Err(Error::Internal("auc: labels/proba length mismatch".into()));
    }
    let mut total = 0.0;
    let mut counted = 0;
    for class in 0..n_classes {
        let binary: Vec<bool> = labels.iter().map(|&l| l == class).collect();
        let pos = binary.iter().filter(|&&b| b).count();
        if pos == 0 || pos == binary.len() {
            continue;
        }
        let scores: Vec<f64> = proba.iter().map(|p| p[class]).collect();
        total += roc_auc_binary(&binary, &scores)?;
        counted += 1;
    }
    if counted == 0 {
        return Err(Error::Input("auc undefined: single class in labels".into()));
    }
    Ok(total / counted as f64)
}

pub fn accuracy(labels: &[usize], predictions: &[usize]) -> f64 {
    assert_eq!(labels.len(), predictions.len());
    if labels.is_empty() {
        return 0.0;
    }
    let hits = labels.iter().zip(predictions).filter(|(l, p)| l == p).count();
    hits as f64 / labels.len() as f64
}

/// Macro F1 over the union of classes seen in labels or predictions. A class
/// with an empty precision or recall denominator contributes an F1 of zero,
/// so predicting a phantom class is penalized rather than ignored.
pub fn f1_macro(labels: &[usize], predictions: &[usize]) -> f64 {
    assert_eq!(labels.len(), predictions.len());
    let mut classes: Vec<usize> = labels.iter().chain(predictions).copied().collect();
    classes.sort_unstable();
    classes.dedup();
    if classes.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0;
    for &c in &classes {
        let tp = labels
            .iter()
            .zip(predictions)
            .filter(|(&l, &p)| l == c && p == c)
            .count() as f64;
        let pred_c = predictions.iter().filter(|&&p| p == c).count() as f64;
        let true_c = labels.iter().filter(|&&l| l == c).count() as f64;
        if pred_c > 0.0 && true_c > 0.0 && tp > 0.0 {
            let precision = tp / pred_c;
            let recall = tp / true_c;
            sum += 2.0 * precision * recall / (precision + recall);
        }
    }
    sum / classes.len() as f64
}

/// Mean negative log-likelihood of the true class, with probabilities
/// clamped to 1e-15 so a confidently wrong model scores finitely.
pub fn cross_entropy(labels: &[usize], proba: &[Vec<f64>]) -> f64 {
    assert_eq!(labels.len(), proba.len());
    if labels.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for (&l, p) in labels.iter().zip(proba) {
        total -= p[l].max(1e-15).ln();
    }
    total / labels.len() as f64
}

/// Expected calibration error with ten equal-width confidence bins over the
/// predicted class's probability: Σ_b (|b|/n)·|acc(b) − conf(b)|.
pub fn ece(labels: &[usize], proba: &[Vec<f64>]) -> f64 {
    assert_eq!(labels.len(), proba.len());
    if labels.is_empty() {
        return 0.0;
    }
    const BINS: usize = 10;
    let mut count = [0usize; BINS];
    let mut conf_sum = [0.0f64; BINS];
    let mut hit_sum = [0.0f64; BINS];
    for (&l, p) in labels.iter().zip(proba) {
        let (pred, conf) = p
            .iter()
            .copied()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        let bin = ((conf * BINS as f64) as usize).min(BINS - 1);
        count[bin] += 1;
        conf_sum[bin] += conf;
        if pred == l {
            hit_sum[bin] += 1.0;
        }
    }
    let n = labels.len() as f64;
    let mut total = 0.0;
    for b in 0..BINS {
        if count[b] > 0 {
            let m = count[b] as f64;
            total += (m / n) * (hit_sum[b] / m - conf_sum[b] / m).abs();
        }
    }
    total
}
