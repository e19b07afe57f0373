//! Paired significance testing. The Wilcoxon signed-rank test here is
//! two-sided, discards zero differences, and assigns average ranks to tied
//! absolute differences. For n ≤ 20 non-zero pairs the null distribution of
//! W⁺ is enumerated exactly over all 2ⁿ sign assignments (with the observed
//! tied ranks); for larger n a normal approximation with tie correction and
//! a continuity correction is used.

use crate::error::{Error, Result};

/// Cutoff between exact enumeration and the normal approximation.
const EXACT_MAX_N: usize = 20;

#[derive(Clone, Copy, Debug)]
pub struct WilcoxonResult {
    /// Sum of ranks of positive differences.
    pub w_plus: f64,
    /// Number of non-zero differences actually ranked.
    pub n_used: usize,
    /// Two-sided p-value.
    pub p_value: f64,
    /// True when the 2ⁿ enumeration was used rather than the approximation.
    pub exact: bool,
}

/// Two-sided Wilcoxon signed-rank test on paired samples.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::Internal(format!(
            "wilcoxon: {} vs {} samples",
            a.len(),
            b.len()
        )));
    }
    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::Numerical("wilcoxon: non-finite difference".into()));
    }
    let n = diffs.len();
    if n == 0 {
        // All pairs identical: no evidence against the null at all.
        return Ok(WilcoxonResult { w_plus: 0.0, n_used: 0, p_value: 1.0, exact: true });
    }

    // Rank by |d| with average ranks for ties.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| diffs[i].abs().partial_cmp(&diffs[j].abs()).unwrap());
    let mut ranks = vec![0.0f64; n];
    let mut tie_sizes = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && diffs[order[j]].abs() == diffs[order[i]].abs() {
            j += 1;
        }
        let avg = ((i + 1 + j) as f64) / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = avg;
        }
        tie_sizes.push(j - i);
        i = j;
    }
    let w_plus: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| *r)
        .sum();

    let p_value = if n <= EXACT_MAX_N {
        exact_two_sided_p(&ranks, w_plus)
    } else {
        approx_two_sided_p(n, &tie_sizes, w_plus)
    };
    Ok(WilcoxonResult { w_plus, n_used: n, p_value, exact: n <= EXACT_MAX_N })
}

/// Exact two-sided p: enumerate W⁺ over all 2ⁿ sign vectors using the
/// observed rank multiset, then p = min(1, 2·min(P(W⁺ ≤ w), P(W⁺ ≥ w))).
fn exact_two_sided_p(ranks: &[f64], w_obs: f64) -> f64 {
    let n = ranks.len();
    let total = 1u64 << n;
    let mut le = 0u64;
    let mut ge = 0u64;
    // Tolerance for comparing sums of halves: exact in binary, but keep a
    // guard for robustness.
    let eps = 1e-9;
    for mask in 0..total {
        let mut w = 0.0;
        for (bit, r) in ranks.iter().enumerate() {
            if mask >> bit & 1 == 1 {
                w += r;
            }
        }
        if w <= w_obs + eps {
            le += 1;
        }
        if w >= w_obs - eps {
            ge += 1;
        }
    }
    let p_le = le as f64 / total as f64;
    let p_ge = ge as f64 / total as f64;
    (2.0 * p_le.min(p_ge)).min(1.0)
}

/// Normal approximation with tie correction:
/// μ = n(n+1)/4, σ² = n(n+1)(2n+1)/24 − Σ(t³−t)/48, continuity ±0.5.
fn approx_two_sided_p(n: usize, tie_sizes: &[usize], w_plus: f64) -> f64 {
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_term: f64 =
        tie_sizes.iter().map(|&t| (t as f64).powi(3) - t as f64).sum::<f64>() / 48.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
    if var <= 0.0 {
        return 1.0;
    }
    let diff = w_plus - mean;
    let correction = 0.5 * diff.signum();
    let z = (diff - correction) / var.sqrt();
    2.0 * normal_sf(z.abs())
}

/// Standard normal survival function via the complementary error function.
fn normal_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z / std::f64::consts::SQRT_2)
}

/// Holm-Bonferroni step-down adjustment; returns adjusted p-values in the
/// original order, clamped to 1 and forced monotone.
pub fn holm_adjust(p_values: &[f64]) -> Vec<f64> {
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| p_values[i].partial_cmp(&p_values[j]).unwrap());
    let mut adjusted = vec![0.0; m];
    let mut running_max = 0.0f64;
    for (rank, &idx) in order.iter().enumerate() {
        let scaled = ((m - rank) as f64 * p_values[idx]).min(1.0);
        running_max = running_max.max(scaled);
        adjusted[idx] = running_max;
    }
    adjusted
}
