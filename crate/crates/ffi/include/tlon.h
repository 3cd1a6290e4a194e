#ifndef TLON_H
#define TLON_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every call.
 */
typedef enum TlonStatus {
  TLON_STATUS_OK = 0,
  TLON_STATUS_NULL_POINTER = 1,
  TLON_STATUS_INVALID_ARGUMENT = 2,
  TLON_STATUS_IO = 3,
  TLON_STATUS_MODEL = 4,
  TLON_STATUS_NUMERIC = 5,
  TLON_STATUS_PANIC = 6,
} TlonStatus;

/**
 * A loaded operator network.
 */
typedef struct TlonModel TlonModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *tlon_last_error_message(void);

/**
 * Library version, a static NUL-terminated string.
 */
const char *tlon_version(void);

/**
 * Loads a checkpoint. `arch_json` is the architecture as JSON; when null
 * the `arch.json` next to the checkpoint is used.
 *
 * # Safety
 * `checkpoint_path` and a non-null `arch_json` must be NUL-terminated
 * strings; `out` must be writable.
 */
enum TlonStatus tlon_model_load(const char *checkpoint_path,
                                const char *arch_json,
                                struct TlonModel **out);

/**
 * Releases a model; null is ignored.
 *
 * # Safety
 * `model` must be null or a handle from [`tlon_model_load`] not yet freed.
 */
void tlon_model_free(struct TlonModel *model);

/**
 * Length of one flattened branch input and the coordinate dimension.
 *
 * # Safety
 * `model` must be a live handle; the outputs must be writable.
 */
enum TlonStatus tlon_model_dims(const struct TlonModel *model,
                                size_t *branch_len,
                                size_t *coord_dim);

/**
 * Predicts `n_samples × n_points` outputs (row-major) for `n_samples`
 * flattened branch inputs and `n_points` coordinates.
 *
 * # Safety
 * `inputs` holds `n_samples × branch_len` doubles, `coords` holds
 * `n_points × coord_dim` doubles and `out` has room for
 * `n_samples × n_points` doubles.
 */
enum TlonStatus tlon_model_predict(const struct TlonModel *model,
                                   const double *inputs,
                                   size_t n_samples,
                                   const double *coords,
                                   size_t n_points,
                                   double *out);

/**
 * Discrepancy between the conditional distributions of `(p_x, p_y)`
 * (`n_p` rows) and `(q_x, q_y)` (`n_q` rows) under Gaussian kernels.
 * A non-positive bandwidth selects the median heuristic over both sets.
 *
 * # Safety
 * Each array holds `rows × dim` doubles as named; `out` is writable.
 */
enum TlonStatus tlon_ceod(const double *p_x,
                          const double *p_y,
                          size_t n_p,
                          const double *q_x,
                          const double *q_y,
                          size_t n_q,
                          size_t dim_x,
                          size_t dim_y,
                          double lambda,
                          double bandwidth_x,
                          double bandwidth_y,
                          double *out);

/**
 * Squared maximum mean discrepancy between two samples under a Gaussian
 * kernel; a non-positive bandwidth selects the median heuristic.
 *
 * # Safety
 * `a` holds `n_a × dim` and `b` holds `n_b × dim` doubles; `out` is
 * writable.
 */
enum TlonStatus tlon_mmd2(const double *a,
                          size_t n_a,
                          const double *b,
                          size_t n_b,
                          size_t dim,
                          double bandwidth,
                          double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TLON_H */
