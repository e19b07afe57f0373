#ifndef TABCPT_H
#define TABCPT_H

/* Generated by cbindgen from tabcpt-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>
typedef struct TabcptModel TabcptModel;

/**
 * Result of every fallible call. Values match the CLI's exit codes for the
 * same failure classes; 1 is reserved (a process-level outcome, not an API
 * error).
 */
typedef enum TabcptStatus {
  TABCPT_STATUS_OK = 0,
  TABCPT_STATUS_INPUT_ERROR = 2,
  TABCPT_STATUS_INTERNAL_ERROR = 3,
  TABCPT_STATUS_NUMERICAL_ERROR = 4,
  TABCPT_STATUS_CURATION_GUARD_ERROR = 5,
  TABCPT_STATUS_CONFIG_ERROR = 6,
} TabcptStatus;

/**
 * Checkpoint metadata snapshot filled by `tabcpt_model_info`.
 */
typedef struct TabcptModelInfo {
  /**
   * 0 = base (synthetic prior only), 1 = continued on real tables.
   */
  uint32_t stage;
  /**
   * Training steps the checkpoint has seen.
   */
  uint64_t steps;
  /**
   * Master seed of the producing run.
   */
  uint64_t seed;
  /**
   * Maximum feature columns per task.
   */
  size_t max_features;
  /**
   * Maximum classes per task (fixed head width).
   */
  size_t max_classes;
  /**
   * Total trainable parameter count.
   */
  size_t n_params;
} TabcptModelInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *tabcpt_version(void);

/**
 * Message for the most recent failure on this thread. The pointer stays
 * valid until the next tabcpt call on the same thread. Never NULL.
 */
const char *tabcpt_last_error(void);

/**
 * Load a checkpoint file. On success, `*out` owns the new handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TabcptStatus tabcpt_model_load(const char *path, TabcptModel **out);

/**
 * Release a handle from `tabcpt_model_load`. NULL is a no-op.
 *
 * # Safety
 * `model` must be a pointer returned by `tabcpt_model_load` that has not
 * been freed already.
 */
void tabcpt_model_free(TabcptModel *model);

/**
 * Fill `out` with checkpoint metadata.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum TabcptStatus tabcpt_model_info(const TabcptModel *model, struct TabcptModelInfo *out);

/**
 * In-context prediction: class probabilities for each query row given
 * labeled context rows, in one forward pass.
 *
 * - `context_x`: `n_context * n_features` row-major; NaN marks a missing
 *   cell.
 * - `context_y`: `n_context` labels in `[0, n_classes)`.
 * - `query_x`: `n_query * n_features` row-major; NaN marks a missing cell.
 * - `out_proba`: `n_query * n_classes` row-major; each row sums to 1.
 *
 * Features are z-normalized with statistics from the non-missing context
 * cells, exactly as during training.
 *
 * # Safety
 * `model` must be a live handle and every buffer valid for the lengths
 * implied by the count arguments.
 */
enum TabcptStatus tabcpt_predict_proba(const TabcptModel *model,
                                       const double *context_x,
                                       const uint32_t *context_y,
                                       size_t n_context,
                                       const double *query_x,
                                       size_t n_query,
                                       size_t n_features,
                                       size_t n_classes,
                                       double *out_proba);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* TABCPT_H */
