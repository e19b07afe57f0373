//! Round-trip tests of the C interface: once through the extern functions
//! from Rust, and once through an actual C program compiled against the
//! generated header and linked to the static library. Both routes must
//! produce the same probabilities.

use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;

use tabcpt::checkpoint::{params_digest, save_checkpoint, Checkpoint, Stage};
use tabcpt::model::{init_params, ModelConfig};
use tabcpt_ffi::*;

fn test_config() -> ModelConfig {
    ModelConfig { max_features: 4, embed_dim: 8, n_heads: 2, n_layers: 1, ff_dim: 12 }
}

fn write_test_checkpoint(path: &Path) -> Checkpoint {
    let config = test_config();
    let params = init_params(&config, 11).unwrap();
    let ckpt = Checkpoint {
        anchor_digest: params_digest(&params),
        config,
        stage: Stage::Continued,
        steps: 123,
        seed: 11,
        params,
    };
    save_checkpoint(path, &ckpt).unwrap();
    ckpt
}

// 4 context rows x 2 features, 2 query rows, row-major.
const CTX_X: [f64; 8] = [-1.0, -0.5, 1.0, 0.7, -0.8, -0.9, 0.6, 1.2];
const CTX_Y: [u32; 4] = [0, 1, 0, 1];
const QRY_X: [f64; 4] = [-1.1, -0.7, 0.9, 0.8];

fn predict_via_rust(ckpt_path: &Path) -> [f64; 4] {
    let c_path = CString::new(ckpt_path.to_str().unwrap()).unwrap();
    let mut model: *mut TabcptModel = std::ptr::null_mut();
    let status = unsafe { tabcpt_model_load(c_path.as_ptr(), &mut model) };
    assert_eq!(status, TabcptStatus::Ok, "{:?}", last_error());
    let mut out = [0.0f64; 4];
    let status = unsafe {
        tabcpt_predict_proba(
            model,
            CTX_X.as_ptr(),
            CTX_Y.as_ptr(),
            4,
            QRY_X.as_ptr(),
            2,
            2,
            2,
            out.as_mut_ptr(),
        )
    };
    assert_eq!(status, TabcptStatus::Ok, "{:?}", last_error());
    unsafe { tabcpt_model_free(model) };
    out
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(tabcpt_last_error()) }.to_str().unwrap().to_string()
}

#[test]
fn load_info_predict_free_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt_path = dir.path().join("m.ckpt");
    write_test_checkpoint(&ckpt_path);

    let c_path = CString::new(ckpt_path.to_str().unwrap()).unwrap();
    let mut model: *mut TabcptModel = std::ptr::null_mut();
    assert_eq!(unsafe { tabcpt_model_load(c_path.as_ptr(), &mut model) }, TabcptStatus::Ok);
    assert!(!model.is_null());

    let mut info = std::mem::MaybeUninit::<TabcptModelInfo>::uninit();
    assert_eq!(unsafe { tabcpt_model_info(model, info.as_mut_ptr()) }, TabcptStatus::Ok);
    let info = unsafe { info.assume_init() };
    assert_eq!(info.stage, 1);
    assert_eq!(info.steps, 123);
    assert_eq!(info.seed, 11);
    assert_eq!(info.max_features, 4);
    assert_eq!(info.max_classes, 10);
    assert_eq!(info.n_params, test_config().n_params());

    let mut out = [0.0f64; 4];
    let status = unsafe {
        tabcpt_predict_proba(
            model,
            CTX_X.as_ptr(),
            CTX_Y.as_ptr(),
            4,
            QRY_X.as_ptr(),
            2,
            2,
            2,
            out.as_mut_ptr(),
        )
    };
    assert_eq!(status, TabcptStatus::Ok, "{:?}", last_error());
    for row in out.chunks(2) {
        let sum: f64 = row.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12, "row sums to {sum}");
        assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
    }
    // Deterministic across calls.
    assert_eq!(out, predict_via_rust(&ckpt_path));
    unsafe { tabcpt_model_free(model) };
}

#[test]
fn nan_cells_are_treated_as_missing_not_poison() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt_path = dir.path().join("m.ckpt");
    write_test_checkpoint(&ckpt_path);
    let c_path = CString::new(ckpt_path.to_str().unwrap()).unwrap();
    let mut model: *mut TabcptModel = std::ptr::null_mut();
    assert_eq!(unsafe { tabcpt_model_load(c_path.as_ptr(), &mut model) }, TabcptStatus::Ok);
    let mut ctx = CTX_X;
    ctx[1] = f64::NAN;
    let mut qry = QRY_X;
    qry[2] = f64::NAN;
    let mut out = [0.0f64; 4];
    let status = unsafe {
        tabcpt_predict_proba(
            model,
            ctx.as_ptr(),
            CTX_Y.as_ptr(),
            4,
            qry.as_ptr(),
            2,
            2,
            2,
            out.as_mut_ptr(),
        )
    };
    assert_eq!(status, TabcptStatus::Ok, "{:?}", last_error());
    assert!(out.iter().all(|p| p.is_finite()));
    unsafe { tabcpt_model_free(model) };
}

#[test]
fn error_paths_return_statuses_and_messages() {
    let dir = tempfile::tempdir().unwrap();
    let missing = CString::new(dir.path().join("nope.ckpt").to_str().unwrap()).unwrap();
    let mut model: *mut TabcptModel = std::ptr::null_mut();
    assert_eq!(
        unsafe { tabcpt_model_load(missing.as_ptr(), &mut model) },
        TabcptStatus::InputError
    );
    assert!(last_error().contains("nope.ckpt"), "{}", last_error());

    let ckpt_path = dir.path().join("m.ckpt");
    write_test_checkpoint(&ckpt_path);
    let c_path = CString::new(ckpt_path.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { tabcpt_model_load(c_path.as_ptr(), &mut model) }, TabcptStatus::Ok);

    let mut out = [0.0f64; 4];
    // Label outside the class range.
    let bad_y = [0u32, 7, 0, 1];
    let status = unsafe {
        tabcpt_predict_proba(
            model, CTX_X.as_ptr(), bad_y.as_ptr(), 4, QRY_X.as_ptr(), 2, 2, 2, out.as_mut_ptr(),
        )
    };
    assert_eq!(status, TabcptStatus::InputError);
    // More features than the model supports.
    let status = unsafe {
        tabcpt_predict_proba(
            model, CTX_X.as_ptr(), CTX_Y.as_ptr(), 1, QRY_X.as_ptr(), 0, 8, 2, out.as_mut_ptr(),
        )
    };
    assert_eq!(status, TabcptStatus::InputError);
    // Infinity is rejected as a numerical error, not silently masked.
    let inf_ctx = [f64::INFINITY, -0.5, 1.0, 0.7, -0.8, -0.9, 0.6, 1.2];
    let status = unsafe {
        tabcpt_predict_proba(
            model, inf_ctx.as_ptr(), CTX_Y.as_ptr(), 4, QRY_X.as_ptr(), 2, 2, 2, out.as_mut_ptr(),
        )
    };
    assert_eq!(status, TabcptStatus::NumericalError);
    // NULL handle.
    let status = unsafe {
        tabcpt_predict_proba(
            std::ptr::null(), CTX_X.as_ptr(), CTX_Y.as_ptr(), 4, QRY_X.as_ptr(), 2, 2, 2,
            out.as_mut_ptr(),
        )
    };
    assert_eq!(status, TabcptStatus::InputError);
    unsafe { tabcpt_model_free(model) };
    unsafe { tabcpt_model_free(std::ptr::null_mut()) }; // no-op, must not crash
}

const C_PROGRAM: &str = r#"
#include <assert.h>
#include <math.h>
#include <stdio.h>
#include "tabcpt.h"

int main(int argc, char **argv) {
    if (argc != 2) return 10;
    TabcptModel *model = NULL;
    if (tabcpt_model_load(argv[1], &model) != TABCPT_STATUS_OK) {
        fprintf(stderr, "load: %s\n", tabcpt_last_error());
        return 1;
    }
    TabcptModelInfo info;
    if (tabcpt_model_info(model, &info) != TABCPT_STATUS_OK) return 2;
    if (info.max_classes != 10 || info.stage != 1) return 3;

    double ctx_x[8] = {-1.0, -0.5, 1.0, 0.7, -0.8, -0.9, 0.6, 1.2};
    uint32_t ctx_y[4] = {0, 1, 0, 1};
    double qry_x[4] = {-1.1, -0.7, 0.9, 0.8};
    double proba[4];
    if (tabcpt_predict_proba(model, ctx_x, ctx_y, 4, qry_x, 2, 2, 2, proba)
            != TABCPT_STATUS_OK) {
        fprintf(stderr, "predict: %s\n", tabcpt_last_error());
        return 4;
    }
    for (int i = 0; i < 2; i++) {
        if (fabs(proba[2 * i] + proba[2 * i + 1] - 1.0) > 1e-9) return 5;
    }
    TabcptModel *bogus = NULL;
    if (tabcpt_model_load(NULL, &bogus) == TABCPT_STATUS_OK) return 6;
    printf("%.17g %.17g %.17g %.17g\n", proba[0], proba[1], proba[2], proba[3]);
    tabcpt_model_free(model);
    return 0;
}
"#;

fn static_lib_path() -> PathBuf {
    // Tests run from target/<profile>/deps/...; the staticlib sits one
    // directory up.
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().join("libtabcpt_ffi.a")
}

#[test]
fn c_program_compiles_links_and_agrees_with_rust() {
    let lib = static_lib_path();
    assert!(lib.exists(), "staticlib missing at {}", lib.display());
    let include_dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    assert!(include_dir.join("tabcpt.h").exists(), "header was not generated");

    let dir = tempfile::tempdir().unwrap();
    let ckpt_path = dir.path().join("m.ckpt");
    write_test_checkpoint(&ckpt_path);
    let src = dir.path().join("smoke.c");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let bin = dir.path().join("smoke");

    let compile = Command::new("cc")
        .arg("-std=c11")
        .arg("-O1")
        .arg("-I")
        .arg(&include_dir)
        .arg(&src)
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl"])
        .arg("-o")
        .arg(&bin)
        .output()
        .expect("cc not runnable");
    assert!(
        compile.status.success(),
        "compile failed:\n{}",
        String::from_utf8_lossy(&compile.stderr)
    );

    let run = Command::new(&bin).arg(&ckpt_path).output().expect("smoke binary not runnable");
    assert!(
        run.status.success(),
        "smoke binary exited {:?}:\n{}",
        run.status.code(),
        String::from_utf8_lossy(&run.stderr)
    );
    let stdout = String::from_utf8(run.stdout).unwrap();
    let c_proba: Vec<f64> =
        stdout.split_whitespace().map(|t| t.parse().unwrap()).collect();
    assert_eq!(c_proba.len(), 4);

    // The same inputs through the Rust-side calls must agree exactly
    // (printf %.17g round-trips doubles).
    let rust_proba = predict_via_rust(&ckpt_path);
    for (c, r) in c_proba.iter().zip(rust_proba.iter()) {
        assert!((c - r).abs() < 1e-15, "C {c} vs Rust {r}");
    }
}
