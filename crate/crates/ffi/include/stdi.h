#ifndef STDI_H
#define STDI_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum StdiStatus {
  STDI_STATUS_OK = 0,
  STDI_STATUS_NULL_POINTER = 1,
  STDI_STATUS_INVALID_ARGUMENT = 2,
  STDI_STATUS_IO = 3,
  STDI_STATUS_FORMAT = 4,
  STDI_STATUS_SHAPE = 5,
  STDI_STATUS_DOMAIN = 6,
  STDI_STATUS_NUMERIC = 7,
  /**
   * The library panicked; the handle involved should not be reused.
   */
  STDI_STATUS_INTERNAL = 8,
} StdiStatus;

/**
 * Trained model loaded from a checkpoint.
 */
typedef struct StdiModel StdiModel;

/**
 * Demand series loaded from a series file.
 */
typedef struct StdiSeries StdiSeries;

typedef struct StdiModelInfo {
  size_t rows;
  size_t cols;
  size_t seq_len;
  /**
   * Values per prediction, `2 * rows * cols`.
   */
  size_t outputs;
  /**
   * Nonzero when the checkpoint carries min-max scaling.
   */
  uint8_t scaled;
} StdiModelInfo;

typedef struct StdiMetrics {
  double rmse;
  double mae;
  size_t count;
} StdiMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *stdi_last_error(void);

void stdi_clear_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *stdi_version(void);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer. On
 * success `*out` owns a handle to release with [`stdi_series_free`].
 */
enum StdiStatus stdi_series_open(const char *path, struct StdiSeries **out);

/**
 * # Safety
 * `series` must come from [`stdi_series_open`]; any out pointer may be null.
 */
enum StdiStatus stdi_series_shape(const struct StdiSeries *series,
                                  size_t *rows,
                                  size_t *cols,
                                  size_t *len,
                                  int64_t *start_epoch);

/**
 * Copies frame `t` (rentals then returns, row-major, `2*rows*cols` values).
 *
 * # Safety
 * `out` must point to `out_len` writable floats.
 */
enum StdiStatus stdi_series_frame(const struct StdiSeries *series,
                                  size_t t,
                                  float *out,
                                  size_t out_len);

/**
 * # Safety
 * `series` must come from [`stdi_series_open`] and not be used afterwards.
 * Null is ignored.
 */
void stdi_series_free(struct StdiSeries *series);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer. On
 * success `*out` owns a handle to release with [`stdi_model_free`].
 */
enum StdiStatus stdi_model_load(const char *path, struct StdiModel **out);

/**
 * # Safety
 * `model` must come from [`stdi_model_load`]; `out` must be valid.
 */
enum StdiStatus stdi_model_info(const struct StdiModel *model, struct StdiModelInfo *out);

/**
 * Model kind name, owned by the handle. Null if `model` is null.
 *
 * # Safety
 * `model` must come from [`stdi_model_load`] or be null.
 */
const char *stdi_model_kind(const struct StdiModel *model);

/**
 * Predicts the next frame from `seq_len` raw frames (oldest first,
 * `seq_len*2*rows*cols` values) and the target hour of day.
 *
 * # Safety
 * `window` must point to `window_len` floats and `out` to `out_len`
 * writable floats.
 */
enum StdiStatus stdi_model_predict(struct StdiModel *model,
                                   const float *window,
                                   size_t window_len,
                                   uint32_t hour,
                                   float *out,
                                   size_t out_len);

/**
 * Predicts frame `t` of `series` from the `seq_len` frames before it.
 *
 * # Safety
 * Handles must be live; `out` must point to `out_len` writable floats.
 */
enum StdiStatus stdi_model_predict_series(struct StdiModel *model,
                                          const struct StdiSeries *series,
                                          size_t t,
                                          float *out,
                                          size_t out_len);

/**
 * # Safety
 * `model` must come from [`stdi_model_load`] and not be used afterwards.
 * Null is ignored.
 */
void stdi_model_free(struct StdiModel *model);

/**
 * RMSE and MAE over `n` paired values.
 *
 * # Safety
 * `predictions` and `targets` must each point to `n` doubles.
 */
enum StdiStatus stdi_metrics(const double *predictions,
                             const double *targets,
                             size_t n,
                             struct StdiMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STDI_H */
