//! C interface to the tabcpt model: load a checkpoint, inspect it, and run
//! in-context prediction, behind an opaque handle.
//!
//! Conventions:
//! - Every fallible function returns a [`TabcptStatus`]; `TABCPT_STATUS_OK`
//!   is zero. On any failure, [`tabcpt_last_error`] returns a message valid
//!   on the calling thread until its next tabcpt call.
//! - Matrices are row-major `f64`. A `NaN` feature cell means "missing" and
//!   is handled like the training pipeline handles missing cells.
//! - Handles from `tabcpt_model_load` are released with `tabcpt_model_free`;
//!   all other pointers stay caller-owned.
//! - Panics never unwind across the boundary; they surface as
//!   `TABCPT_STATUS_INTERNAL_ERROR`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use ndarray::{s, Array2};

use tabcpt::checkpoint::{load_checkpoint, Stage};
use tabcpt::model::{predict_proba, Batch, ModelConfig};
use tabcpt::table::{znormalize, MAX_CLASSES};
use tabcpt::Error;

/// Result of every fallible call. Values match the CLI's exit codes for the
/// same failure classes; 1 is reserved (a process-level outcome, not an API
/// error).
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TabcptStatus {
    Ok = 0,
    InputError = 2,
    InternalError = 3,
    NumericalError = 4,
    CurationGuardError = 5,
    ConfigError = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).expect("NULs removed");
    });
}

fn fail(e: &Error) -> TabcptStatus {
    set_error(&e.to_string());
    match e.exit_code() {
        2 => TabcptStatus::InputError,
        4 => TabcptStatus::NumericalError,
        5 => TabcptStatus::CurationGuardError,
        6 => TabcptStatus::ConfigError,
        _ => TabcptStatus::InternalError,
    }
}

fn fail_input(message: &str) -> TabcptStatus {
    set_error(message);
    TabcptStatus::InputError
}

/// Run `body` with panics converted to an internal-error status.
fn guarded(body: impl FnOnce() -> TabcptStatus) -> TabcptStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            TabcptStatus::InternalError
        }
    }
}

/// Loaded model handle. Opaque to C; create with `tabcpt_model_load`,
/// release with `tabcpt_model_free`.
pub struct TabcptModel {
    config: ModelConfig,
    params: Vec<f64>,
    stage: Stage,
    steps: u64,
    seed: u64,
}

/// Checkpoint metadata snapshot filled by `tabcpt_model_info`.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct TabcptModelInfo {
    /// 0 = base (synthetic prior only), 1 = continued on real tables.
    pub stage: u32,
    /// Training steps the checkpoint has seen.
    pub steps: u64,
    /// Master seed of the producing run.
    pub seed: u64,
    /// Maximum feature columns per task.
    pub max_features: usize,
    /// Maximum classes per task (fixed head width).
    pub max_classes: usize,
    /// Total trainable parameter count.
    pub n_params: usize,
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tabcpt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the most recent failure on this thread. The pointer stays
/// valid until the next tabcpt call on the same thread. Never NULL.
#[no_mangle]
pub extern "C" fn tabcpt_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Load a checkpoint file. On success, `*out` owns the new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tabcpt_model_load(
    path: *const c_char,
    out: *mut *mut TabcptModel,
) -> TabcptStatus {
    guarded(|| {
        if path.is_null() || out.is_null() {
            return fail_input("tabcpt_model_load: NULL argument");
        }
        let path = match unsafe { CStr::from_ptr(path) }.to_str() {
            Ok(s) => s,
            Err(_) => return fail_input("tabcpt_model_load: path is not valid UTF-8"),
        };
        match load_checkpoint(Path::new(path)) {
            Ok(ckpt) => {
                let model = Box::new(TabcptModel {
                    config: ckpt.config,
                    params: ckpt.params,
                    stage: ckpt.stage,
                    steps: ckpt.steps,
                    seed: ckpt.seed,
                });
                unsafe { *out = Box::into_raw(model) };
                TabcptStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Release a handle from `tabcpt_model_load`. NULL is a no-op.
///
/// # Safety
/// `model` must be a pointer returned by `tabcpt_model_load` that has not
/// been freed already.
#[no_mangle]
pub unsafe extern "C" fn tabcpt_model_free(model: *mut TabcptModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Fill `out` with checkpoint metadata.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tabcpt_model_info(
    model: *const TabcptModel,
    out: *mut TabcptModelInfo,
) -> TabcptStatus {
    guarded(|| {
        if model.is_null() || out.is_null() {
            return fail_input("tabcpt_model_info: NULL argument");
        }
        let m = unsafe { &*model };
        unsafe {
            *out = TabcptModelInfo {
                stage: match m.stage {
                    Stage::Base => 0,
                    Stage::Continued => 1,
                },
                steps: m.steps,
                seed: m.seed,
                max_features: m.config.max_features,
                max_classes: MAX_CLASSES,
                n_params: m.config.n_params(),
            };
        }
        TabcptStatus::Ok
    })
}

/// In-context prediction: class probabilities for each query row given
/// labeled context rows, in one forward pass.
///
/// - `context_x`: `n_context * n_features` row-major; NaN marks a missing
///   cell.
/// - `context_y`: `n_context` labels in `[0, n_classes)`.
/// - `query_x`: `n_query * n_features` row-major; NaN marks a missing cell.
/// - `out_proba`: `n_query * n_classes` row-major; each row sums to 1.
///
/// Features are z-normalized with statistics from the non-missing context
/// cells, exactly as during training.
///
/// # Safety
/// `model` must be a live handle and every buffer valid for the lengths
/// implied by the count arguments.
#[no_mangle]
pub unsafe extern "C" fn tabcpt_predict_proba(
    model: *const TabcptModel,
    context_x: *const f64,
    context_y: *const u32,
    n_context: usize,
    query_x: *const f64,
    n_query: usize,
    n_features: usize,
    n_classes: usize,
    out_proba: *mut f64,
) -> TabcptStatus {
    guarded(|| {
        if model.is_null()
            || context_x.is_null()
            || context_y.is_null()
            || query_x.is_null()
            || out_proba.is_null()
        {
            return fail_input("tabcpt_predict_proba: NULL argument");
        }
        let m = unsafe { &*model };
        if n_context == 0 || n_query == 0 {
            return fail_input("tabcpt_predict_proba: need at least one context and one query row");
        }
        if n_features == 0 || n_features > m.config.max_features {
            set_error(&format!(
                "tabcpt_predict_proba: n_features {} outside 1..={}",
                n_features, m.config.max_features
            ));
            return TabcptStatus::InputError;
        }
        if !(2..=MAX_CLASSES).contains(&n_classes) {
            set_error(&format!(
                "tabcpt_predict_proba: n_classes {n_classes} outside 2..={MAX_CLASSES}"
            ));
            return TabcptStatus::InputError;
        }

        let ctx = unsafe { std::slice::from_raw_parts(context_x, n_context * n_features) };
        let y = unsafe { std::slice::from_raw_parts(context_y, n_context) };
        let qry = unsafe { std::slice::from_raw_parts(query_x, n_query * n_features) };
        if let Some(bad) = y.iter().find(|&&l| l as usize >= n_classes) {
            set_error(&format!(
                "tabcpt_predict_proba: context label {bad} outside 0..{n_classes}"
            ));
            return TabcptStatus::InputError;
        }
        if ctx.iter().chain(qry.iter()).any(|v| v.is_infinite()) {
            set_error("tabcpt_predict_proba: infinite feature value (use NaN for missing)");
            return TabcptStatus::NumericalError;
        }

        let mut ctx_m = Array2::from_shape_vec((n_context, n_features), ctx.to_vec())
            .expect("shape checked");
        let mut qry_m =
            Array2::from_shape_vec((n_query, n_features), qry.to_vec()).expect("shape checked");
        let ctx_missing = ctx_m.mapv(f64::is_nan);
        let qry_missing = qry_m.mapv(f64::is_nan);
        // NaN cells participate only through the missing mask; zero them so
        // the normalization arithmetic stays finite.
        ctx_m.mapv_inplace(|v| if v.is_nan() { 0.0 } else { v });
        qry_m.mapv_inplace(|v| if v.is_nan() { 0.0 } else { v });
        znormalize(&mut ctx_m, &ctx_missing, &mut qry_m, &qry_missing);

        let pad = |mat: &Array2<f64>| {
            let mut out = Array2::zeros((mat.nrows(), m.config.max_features));
            out.slice_mut(s![.., ..mat.ncols()]).assign(mat);
            out
        };
        let batch = Batch {
            x_context: pad(&ctx_m),
            y_context: y.iter().map(|&l| l as usize).collect(),
            x_query: pad(&qry_m),
            y_query: Vec::new(),
            n_features,
            n_classes,
        };
        let full = predict_proba(&m.config, &m.params, &batch);
        let out = unsafe { std::slice::from_raw_parts_mut(out_proba, n_query * n_classes) };
        for (i, row) in full.rows().into_iter().enumerate() {
            let head: Vec<f64> = row.iter().take(n_classes).copied().collect();
            let sum: f64 = head.iter().sum();
            for (c, &v) in head.iter().enumerate() {
                out[i * n_classes + c] = if sum > 0.0 { v / sum } else { 1.0 / n_classes as f64 };
            }
        }
        TabcptStatus::Ok
    })
}
