//! Two-stage training. Stage one pre-trains from scratch on a synthetic
//! prior; stage two continues from a base checkpoint on real tables with an
//! anchor penalty pulling weights back toward the base. Both stages share
//! one loop (`run_training`), so stage two with a zero penalty is literally
//! stage-one training on a different batch source.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::DatasetManifest;
use crate::model::{gradient, init_params, Batch, ModelConfig};
use crate::prior::{sample_task, PriorConfig};
use crate::rng::{derive_seed, rng_for, Stream};
use crate::table::{apply_caps, context_query_split, load_csv_from, merge_rare_classes, ordinal_encode, Table};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub peak_lr: f64,
    pub final_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        if self.warmup_steps >= self.total_steps {
            return Err(Error::Config(format!(
                "warmup_steps {} must be below total_steps {}",
                self.warmup_steps, self.total_steps
            )));
        }
        if !(self.peak_lr.is_finite() && self.peak_lr > 0.0) {
            return Err(Error::Config("peak_lr must be positive".into()));
        }
        if !(self.final_lr.is_finite() && (0.0..=self.peak_lr).contains(&self.final_lr)) {
            return Err(Error::Config("final_lr must lie in [0, peak_lr]".into()));
        }
        Ok(())
    }
}

/// Linear warmup to the peak, then cosine annealing to the final rate.
/// `step` counts from 0; `lr_at_step(total_steps)` is exactly `final_lr`.
pub fn lr_at_step(s: &ScheduleConfig, step: u64) -> f64 {
    debug_assert!(step <= s.total_steps);
    if step < s.warmup_steps {
        return s.peak_lr * step as f64 / s.warmup_steps as f64;
    }
    let progress = (step - s.warmup_steps) as f64 / (s.total_steps - s.warmup_steps) as f64;
    s.final_lr + (s.peak_lr - s.final_lr) * (1.0 + (std::f64::consts::PI * progress).cos()) / 2.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(n_params: usize) -> OptimizerState {
        OptimizerState { m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 }
    }
}

/// One AdamW update with bias-corrected moments and decoupled weight decay.
pub fn adamw_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut OptimizerState,
    cfg: &AdamWConfig,
    lr: f64,
) -> Result<()> {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numerical(format!("non-finite gradient entry at index {i}")));
    }
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * params[i]);
    }
    Ok(())
}

/// Anchor penalty keeping continued training near the base parameters.
#[derive(Clone, Debug)]
pub struct L2sp {
    pub alpha: f64,
    pub anchor: Vec<f64>,
}

impl L2sp {
    /// Inert penalty for stage one: zero strength, anchored at the start
    /// point so the distance log reads as drift from initialization.
    pub fn inert(anchor: Vec<f64>) -> L2sp {
        L2sp { alpha: 0.0, anchor }
    }
}

/// (alpha / 2) * ||w - w0||^2
pub fn l2sp_penalty(params: &[f64], l2sp: &L2sp) -> f64 {
    assert_eq!(params.len(), l2sp.anchor.len());
    let ss: f64 = params
        .iter()
        .zip(&l2sp.anchor)
        .map(|(w, w0)| (w - w0) * (w - w0))
        .sum();
    l2sp.alpha / 2.0 * ss
}

/// alpha * (w - w0)
pub fn l2sp_gradient(params: &[f64], l2sp: &L2sp) -> Vec<f64> {
    assert_eq!(params.len(), l2sp.anchor.len());
    params
        .iter()
        .zip(&l2sp.anchor)
        .map(|(w, w0)| l2sp.alpha * (w - w0))
        .collect()
}

pub fn anchor_distance(params: &[f64], anchor: &[f64]) -> f64 {
    params
        .iter()
        .zip(anchor)
        .map(|(w, w0)| (w - w0) * (w - w0))
        .sum::<f64>()
        .sqrt()
}

/// Cross-entropy plus anchor penalty, with the exact combined gradient.
pub fn total_loss(
    model: &ModelConfig,
    params: &[f64],
    batch: &Batch,
    l2sp: &L2sp,
) -> (f64, Vec<f64>) {
    let (ce, mut grad) = gradient(model, params, batch);
    let penalty = l2sp_penalty(params, l2sp);
    for (g, pg) in grad.iter_mut().zip(l2sp_gradient(params, l2sp)) {
        *g += pg;
    }
    (ce + penalty, grad)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub penalty: f64,
    pub anchor_distance: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: Vec<f64>,
    pub log: Vec<LogEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: u64,
    pub peak_lr: f64,
    pub final_lr: f64,
    pub warmup_steps: u64,
    /// Anchor penalty strength; only meaningful in stage two.
    pub alpha: f64,
    /// Row cap applied to each table before splitting.
    pub max_context_rows: usize,
    pub max_cells: usize,
    pub context_fraction: f64,
    pub log_interval: u64,
}

impl TrainConfig {
    pub fn schedule(&self) -> ScheduleConfig {
        ScheduleConfig {
            peak_lr: self.peak_lr,
            final_lr: self.final_lr,
            warmup_steps: self.warmup_steps,
            total_steps: self.steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        // Zero steps means "no training": the output equals the input
        // parameters and there is no schedule to validate.
        if self.steps > 0 {
            self.schedule().validate()?;
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::Config("alpha must be finite and non-negative".into()));
        }
        if self.max_context_rows < 2 {
            return Err(Error::Config("max_context_rows must be at least 2".into()));
        }
        if self.max_cells < 2 {
            return Err(Error::Config("max_cells must be at least 2".into()));
        }
        if !(self.context_fraction > 0.0 && self.context_fraction < 1.0) {
            return Err(Error::Config("context_fraction must lie strictly inside (0, 1)".into()));
        }
        if self.log_interval == 0 {
            return Err(Error::Config("log_interval must be positive".into()));
        }
        Ok(())
    }
}

/// The single training loop both stages run: sequential over steps, one
/// batch per step, AdamW with the warmup-cosine schedule. Deterministic
/// given the initial parameters and the batch source.
pub fn run_training(
    model: &ModelConfig,
    init: Vec<f64>,
    l2sp: &L2sp,
    train: &TrainConfig,
    mut next_batch: impl FnMut(u64) -> Result<Batch>,
) -> Result<TrainOutcome> {
    train.validate()?;
    assert_eq!(init.len(), model.n_params());
    assert_eq!(l2sp.anchor.len(), init.len());
    let schedule = train.schedule();
    let adamw = AdamWConfig::default();
    let mut params = init;
    let mut state = OptimizerState::new(params.len());
    let mut log = Vec::new();

    for step in 0..train.steps {
        let lr = lr_at_step(&schedule, step);
        let batch = next_batch(step)?;
        let (loss, grad) = total_loss(model, &params, &batch, l2sp);
        if !loss.is_finite() {
            return Err(Error::NonFinite { what: "loss", step });
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite { what: "gradient", step });
        }
        adamw_step(&mut params, &grad, &mut state, &adamw, lr)?;
        if step % train.log_interval == 0 || step + 1 == train.steps {
            let entry = LogEntry {
                step,
                lr,
                loss,
                penalty: l2sp_penalty(&params, l2sp),
                anchor_distance: anchor_distance(&params, &l2sp.anchor),
            };
            log::debug!(
                "step {} lr {:.3e} loss {:.5} anchor distance {:.5}",
                entry.step,
                entry.lr,
                entry.loss,
                entry.anchor_distance
            );
            log.push(entry);
        }
    }
    Ok(TrainOutcome { params, log })
}

/// Preprocess one table into a batch with this step's seeds: cap rows,
/// split, normalize.
pub fn step_batch(
    model: &ModelConfig,
    train: &TrainConfig,
    table: &Table,
    master_seed: u64,
    step: u64,
) -> Result<Batch> {
    let capped = apply_caps(
        table,
        train.max_context_rows,
        train.max_cells,
        derive_seed(master_seed, Stream::RowSubsample, step),
    )?;
    let split = context_query_split(
        capped.n_rows(),
        train.context_fraction,
        derive_seed(master_seed, Stream::ContextSplit, step),
    )?;
    Batch::from_table(&capped, &split, model.max_features)
}

/// Stage one: from-scratch pre-training on the synthetic prior. The step
/// index doubles as the task index, so the data stream is reproducible.
pub fn pretrain_base(
    model: &ModelConfig,
    prior: &PriorConfig,
    train: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    model.validate()?;
    prior.validate()?;
    let init = init_params(model, seed)?;
    let l2sp = L2sp::inert(init.clone());
    run_training(model, init, &l2sp, train, |step| {
        let task = sample_task(prior, seed, step)?;
        step_batch(model, train, &task, seed, step)
    })
}

/// Stage two: continued pre-training from a base checkpoint on a fixed
/// corpus of real tables, one uniformly drawn table per step, anchored to
/// the base parameters by the L2-SP penalty.
pub fn continue_pretrain(
    model: &ModelConfig,
    base_params: &[f64],
    corpus: &[Table],
    train: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    model.validate()?;
    if corpus.is_empty() {
        return Err(Error::Input("continued pre-training corpus is empty".into()));
    }
    let l2sp = L2sp { alpha: train.alpha, anchor: base_params.to_vec() };
    run_training(model, base_params.to_vec(), &l2sp, train, |step| {
        let pick = rng_for(seed, Stream::DatasetPick, step).random_range(0..corpus.len());
        step_batch(model, train, &corpus[pick], seed, step)
    })
}

/// Load, encode and class-merge every corpus table. Unreadable datasets are
/// skipped and reported; training on a silently shrunken corpus is fine,
/// training on an empty one is not.
pub fn prepare_corpus(
    datasets: &[DatasetManifest],
    base_dir: &std::path::Path,
) -> (Vec<Table>, Vec<(String, String)>) {
    let mut tables = Vec::new();
    let mut failures = Vec::new();
    for m in datasets {
        let path = if m.path.is_absolute() {
            m.path.clone()
        } else {
            base_dir.join(&m.path)
        };
        match load_csv_from(&path, m) {
            Ok(t) => tables.push(merge_rare_classes(&ordinal_encode(&t))),
            Err(e) => {
                log::warn!("skipping corpus dataset {}: {e}", m.id);
                failures.push((m.id.clone(), e.to_string()));
            }
        }
    }
    (tables, failures)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::Family;

    fn tiny_model() -> ModelConfig {
        ModelConfig { max_features: 4, embed_dim: 8, n_heads: 2, n_layers: 1, ff_dim: 12 }
    }

    fn tiny_train(steps: u64, alpha: f64) -> TrainConfig {
        TrainConfig {
            steps,
            peak_lr: 1e-3,
            final_lr: 0.0,
            warmup_steps: steps / 10,
            alpha,
            max_context_rows: 64,
            max_cells: 4_000,
            context_fraction: 0.6,
            log_interval: 5,
        }
    }

    fn tiny_prior() -> PriorConfig {
        PriorConfig {
            family: Family::RandomLinear,
            max_features: 4,
            max_classes: 2,
            rows_per_task: (24, 48),
            noise: 0.0,
        }
    }

    #[test]
    fn schedule_hits_exact_landmarks() {
        let s = ScheduleConfig {
            peak_lr: 3e-7,
            final_lr: 0.0,
            warmup_steps: 100,
            total_steps: 1000,
        };
        assert_eq!(lr_at_step(&s, 0), 0.0);
        assert_eq!(lr_at_step(&s, 50), 1.5e-7);
        assert_eq!(lr_at_step(&s, 100), 3e-7);
        // Cosine midpoint: halfway between peak and final.
        assert!((lr_at_step(&s, 550) - 1.5e-7).abs() < 1e-20);
        assert!((lr_at_step(&s, 1000) - 0.0).abs() < 1e-25);
        // Monotone decay after warmup.
        let mut prev = lr_at_step(&s, 100);
        for step in 101..=1000 {
            let lr = lr_at_step(&s, step);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn schedule_validation() {
        let mut s = ScheduleConfig { peak_lr: 1e-3, final_lr: 0.0, warmup_steps: 10, total_steps: 10 };
        assert!(s.validate().is_err());
        s.total_steps = 11;
        assert!(s.validate().is_ok());
        s.final_lr = 2e-3;
        assert!(s.validate().is_err());
    }

    #[test]
    fn adamw_first_step_matches_hand_computation() {
        let mut params = vec![1.0];
        let mut state = OptimizerState::new(1);
        let cfg = AdamWConfig::default();
        adamw_step(&mut params, &[0.5], &mut state, &cfg, 0.1).unwrap();
        // m = 0.05, v = 2.5e-4; bias correction makes m_hat = 0.5,
        // v_hat = 0.25; update = 0.1 * 0.5 / (0.5 + 1e-8).
        let expect = 1.0 - 0.1 * (0.5 / (0.5f64.powi(2).sqrt() + 1e-8));
        assert!((params[0] - expect).abs() < 1e-16, "{} vs {expect}", params[0]);

        // Second step with the same gradient.
        adamw_step(&mut params, &[0.5], &mut state, &cfg, 0.1).unwrap();
        let m = 0.9 * 0.05 + 0.1 * 0.5;
        let v = 0.999 * 2.5e-4 + 0.001 * 0.25;
        let m_hat = m / (1.0 - 0.9f64.powi(2));
        let v_hat = v / (1.0 - 0.999f64.powi(2));
        let expect2 = expect - 0.1 * (m_hat / (v_hat.sqrt() + 1e-8));
        assert!((params[0] - expect2).abs() < 1e-15, "{} vs {expect2}", params[0]);
    }

    #[test]
    fn decoupled_weight_decay_shrinks_params_without_touching_moments() {
        let cfg = AdamWConfig { weight_decay: 0.1, ..Default::default() };
        let mut params = vec![2.0];
        let mut state = OptimizerState::new(1);
        adamw_step(&mut params, &[0.0], &mut state, &cfg, 0.5).unwrap();
        // Zero gradient: moments stay zero, only decay acts.
        assert!((params[0] - (2.0 - 0.5 * 0.1 * 2.0)).abs() < 1e-15);
        assert_eq!(state.m[0], 0.0);
        assert_eq!(state.v[0], 0.0);
    }

    #[test]
    fn adamw_rejects_non_finite_gradients() {
        let mut params = vec![1.0];
        let mut state = OptimizerState::new(1);
        let err = adamw_step(&mut params, &[f64::NAN], &mut state, &Default::default(), 0.1)
            .unwrap_err();
        assert_eq!(err.exit_code(), crate::error::exit::NUMERICAL);
    }

    #[test]
    fn l2sp_penalty_and_gradient_are_exact() {
        let l2sp = L2sp { alpha: 0.4, anchor: vec![1.0, -2.0, 0.0] };
        let params = vec![2.0, -2.0, 3.0];
        // (0.4 / 2) * (1 + 0 + 9)
        assert!((l2sp_penalty(&params, &l2sp) - 2.0).abs() < 1e-15);
        let g = l2sp_gradient(&params, &l2sp);
        for (got, want) in g.iter().zip([0.4, 0.0, 1.2]) {
            assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        }

        // Finite-difference check of the penalty gradient.
        let eps = 1e-6;
        for i in 0..params.len() {
            let mut plus = params.clone();
            plus[i] += eps;
            let mut minus = params.clone();
            minus[i] -= eps;
            let fd = (l2sp_penalty(&plus, &l2sp) - l2sp_penalty(&minus, &l2sp)) / (2.0 * eps);
            assert!((fd - g[i]).abs() < 1e-8, "coord {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let model = tiny_model();
        let a = pretrain_base(&model, &tiny_prior(), &tiny_train(12, 0.0), 21).unwrap();
        let b = pretrain_base(&model, &tiny_prior(), &tiny_train(12, 0.0), 21).unwrap();
        assert_eq!(a.params, b.params, "same seed must give identical parameters");
        let c = pretrain_base(&model, &tiny_prior(), &tiny_train(12, 0.0), 22).unwrap();
        assert_ne!(a.params, c.params, "different seed must change the run");
    }

    #[test]
    fn zero_alpha_makes_the_anchor_irrelevant() {
        let model = tiny_model();
        let base = init_params(&model, 4).unwrap();
        let corpus: Vec<Table> = (0..3)
            .map(|i| sample_task(&tiny_prior(), 50, i).unwrap())
            .collect();
        let train = tiny_train(10, 0.0);
        let a = continue_pretrain(&model, &base, &corpus, &train, 9).unwrap();
        // Same run with a wildly different anchor: alpha = 0 must make the
        // trajectories identical.
        let mut fake_anchor = base.clone();
        for v in fake_anchor.iter_mut() {
            *v += 100.0;
        }
        let l2sp = L2sp { alpha: 0.0, anchor: fake_anchor };
        let b = run_training(&model, base.clone(), &l2sp, &train, |step| {
            let pick = rng_for(9, Stream::DatasetPick, step).random_range(0..corpus.len());
            step_batch(&model, &train, &corpus[pick], 9, step)
        })
        .unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn strong_anchor_pins_parameters() {
        let model = tiny_model();
        let base = pretrain_base(&model, &tiny_prior(), &tiny_train(10, 0.0), 31)
            .unwrap()
            .params;
        let corpus: Vec<Table> = (0..3)
            .map(|i| sample_task(&tiny_prior(), 60, i).unwrap())
            .collect();
        let free = continue_pretrain(&model, &base, &corpus, &tiny_train(20, 0.0), 5).unwrap();
        let pinned = continue_pretrain(&model, &base, &corpus, &tiny_train(20, 1_000.0), 5).unwrap();
        let d_free = anchor_distance(&free.params, &base);
        let d_pinned = anchor_distance(&pinned.params, &base);
        assert!(
            d_pinned < d_free,
            "strong anchor must stay closer: {d_pinned} vs {d_free}"
        );
        assert!(d_free > 0.0);
    }

    #[test]
    fn non_finite_loss_reports_failing_step() {
        let model = tiny_model();
        let init = init_params(&model, 2).unwrap();
        let l2sp = L2sp::inert(init.clone());
        let train = tiny_train(10, 0.0);
        let err = run_training(&model, init, &l2sp, &train, |step| {
            let mut batch = crate::model::tests::random_batch(&model, 1, 6, 3, 2);
            if step == 4 {
                batch.x_context[[0, 0]] = f64::NAN;
            }
            Ok(batch)
        })
        .unwrap_err();
        match err {
            Error::NonFinite { step, .. } => assert_eq!(step, 4),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn empty_corpus_is_an_input_error() {
        let model = tiny_model();
        let base = init_params(&model, 1).unwrap();
        let err = continue_pretrain(&model, &base, &[], &tiny_train(5, 0.0), 1).unwrap_err();
        assert_eq!(err.exit_code(), crate::error::exit::INPUT);
    }

    #[test]
    fn log_entries_land_on_the_interval() {
        let model = tiny_model();
        let out = pretrain_base(&model, &tiny_prior(), &tiny_train(12, 0.0), 3).unwrap();
        let steps: Vec<u64> = out.log.iter().map(|e| e.step).collect();
        assert_eq!(steps, vec![0, 5, 10, 11]);
        assert!(out.log.iter().all(|e| e.loss.is_finite()));
    }
}
