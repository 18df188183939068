#ifndef SIDESCREEN_H
#define SIDESCREEN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum {
  SS_STATUS_OK = 0,
  SS_STATUS_NULL_POINTER = 1,
  SS_STATUS_INVALID_ARGUMENT = 2,
  SS_STATUS_IO = 3,
  SS_STATUS_FORMAT = 4,
  SS_STATUS_SHAPE = 5,
  SS_STATUS_NO_THRESHOLD = 6,
  SS_STATUS_DATA = 7,
  SS_STATUS_CORRUPT_MODEL = 8,
  SS_STATUS_PANIC = 9,
} SsStatus;

/**
 * An enrolled screening model.
 */
typedef struct SsModel SsModel;

/**
 * A labeled set of equal-length traces.
 */
typedef struct SsTraceSet SsTraceSet;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *ss_version(void);

/**
 * Message for the last failure on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *ss_last_error(void);

/**
 * Loads a PSCM model file into `*out_model`.
 *
 * # Safety
 * `path` is a NUL-terminated string; the out pointer is writable.
 */
SsStatus ss_model_load(const char *path, SsModel **out_model);

/**
 * # Safety
 * `model` is NULL or a handle from [`ss_model_load`] not yet freed.
 */
void ss_model_free(SsModel *model);

/**
 * Window length the critic scores, and the raw crop `[crop_start, crop_end)`.
 *
 * # Safety
 * `model` is a live handle; the out pointers are writable.
 */
SsStatus ss_model_geometry(const SsModel *model,
                           size_t *window_len,
                           size_t *crop_start,
                           size_t *crop_end);

/**
 * Number of calibrated thresholds stored in the model.
 *
 * # Safety
 * `model` is a live handle; `count` is writable.
 */
SsStatus ss_model_threshold_count(const SsModel *model, size_t *count);

/**
 * The `index`-th stored threshold and the FPR it was calibrated for.
 *
 * # Safety
 * `model` is a live handle; the out pointers are writable.
 */
SsStatus ss_model_threshold_at(const SsModel *model, size_t index, double *target_fpr, double *tau);

/**
 * Threshold calibrated for `target_fpr`; `SS_STATUS_NO_THRESHOLD` when the
 * model has none for that rate.
 *
 * # Safety
 * `model` is a live handle; `tau` is writable.
 */
SsStatus ss_model_threshold(const SsModel *model, double target_fpr, double *tau);

/**
 * Anomaly scores (higher is more anomalous) for `n_traces` traces.
 *
 * # Safety
 * `samples` holds `n_traces * trace_len` doubles; `scores` has room for
 * `n_traces`.
 */
SsStatus ss_score(const SsModel *model,
                  const double *samples,
                  size_t n_traces,
                  size_t trace_len,
                  double *scores);

/**
 * Screens `n_traces` traces against `tau`: `flags[i]` is 1 when trace `i`
 * is flagged (`score >= tau`) and 0 when approved.
 *
 * # Safety
 * As for [`ss_score`], with `flags` sized `n_traces`; `n_flagged` may be NULL.
 */
SsStatus ss_screen(const SsModel *model,
                   const double *samples,
                   size_t n_traces,
                   size_t trace_len,
                   double tau,
                   uint8_t *flags,
                   size_t *n_flagged);

/**
 * Reads a PSCT trace file into `*out_set`.
 *
 * # Safety
 * `path` is a NUL-terminated string; the out pointer is writable.
 */
SsStatus ss_traceset_read(const char *path, SsTraceSet **out_set);

/**
 * # Safety
 * `set` is NULL or a handle from [`ss_traceset_read`] not yet freed.
 */
void ss_traceset_free(SsTraceSet *set);

/**
 * Trace count and samples per trace.
 *
 * # Safety
 * `set` is a live handle; the out pointers are writable.
 */
SsStatus ss_traceset_len(const SsTraceSet *set, size_t *n_traces, size_t *trace_len);

/**
 * Borrowed view of trace `index`; valid until the set is freed.
 *
 * # Safety
 * `set` is a live handle; the out pointers are writable.
 */
SsStatus ss_traceset_samples(const SsTraceSet *set,
                             size_t index,
                             const double **samples,
                             size_t *len);

/**
 * Scenario label of trace `index` as a static string (`"benign"`, `"delay"`, ...).
 *
 * # Safety
 * `set` is a live handle; `label` is writable.
 */
SsStatus ss_traceset_label(const SsTraceSet *set, size_t index, const char **label);

/**
 * Scores every trace of `set` into `scores`, which holds `capacity` doubles.
 *
 * # Safety
 * Live handles; `scores` has room for `capacity` doubles.
 */
SsStatus ss_score_traceset(const SsModel *model,
                           const SsTraceSet *set,
                           double *scores,
                           size_t capacity);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SIDESCREEN_H */
