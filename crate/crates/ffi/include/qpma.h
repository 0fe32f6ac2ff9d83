#ifndef QPMA_H
#define QPMA_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by the C API.
 */
typedef enum QpmaStatus {
  QPMA_STATUS_OK = 0,
  QPMA_STATUS_NULL_POINTER = 1,
  QPMA_STATUS_INVALID_ARGUMENT = 2,
  QPMA_STATUS_DATA_ERROR = 3,
  QPMA_STATUS_NUMERICAL_ERROR = 4,
  QPMA_STATUS_MODEL_FILE_ERROR = 5,
  QPMA_STATUS_IO_ERROR = 6,
  QPMA_STATUS_PANIC = 7,
} QpmaStatus;

/**
 * Opaque handle to a fitted averaged model.
 */
typedef struct QpmaModel QpmaModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Loads a model file written by `qpma fit`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum QpmaStatus qpma_model_load(const char *path, struct QpmaModel **out);

/**
 * Parses a model from the JSON text of a model file.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum QpmaStatus qpma_model_from_json(const char *json, struct QpmaModel **out);

/**
 * Fits every candidate and the leave-one-out weights with default settings.
 *
 * `x` is row-major `n × (p + q)` with the `p` continuous covariates first;
 * `y` has length `n`.
 *
 * # Safety
 * `y` must point to `n` doubles, `x` to `n·(p+q)` doubles, `out` must be valid.
 */
enum QpmaStatus qpma_fit(const double *y,
                         const double *x,
                         size_t n,
                         size_t p,
                         size_t q,
                         struct QpmaModel **out);

/**
 * Releases a model. Passing NULL is a no-op.
 *
 * # Safety
 * `model` must come from this library and not have been freed already.
 */
void qpma_model_free(struct QpmaModel *model);

/**
 * Number of candidate sub-models (0 for NULL).
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t qpma_model_num_candidates(const struct QpmaModel *model);

/**
 * Number of covariates a row must have (0 for NULL).
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t qpma_model_num_covariates(const struct QpmaModel *model);

/**
 * Copies the model weights into `out`, which must hold `len` doubles;
 * `len` must equal the number of candidates.
 *
 * # Safety
 * `model` must be a live handle and `out` must point to `len` writable doubles.
 */
enum QpmaStatus qpma_model_weights(const struct QpmaModel *model, double *out, size_t len);

/**
 * Predicts quantiles for `n_rows` rows (row-major, `n_cols` covariates in
 * model column order) at `n_taus` levels. `out` receives `n_rows × n_taus`
 * values, row-major.
 *
 * # Safety
 * Pointers must reference arrays of the stated sizes.
 */
enum QpmaStatus qpma_model_predict(const struct QpmaModel *model,
                                   const double *x,
                                   size_t n_rows,
                                   size_t n_cols,
                                   const double *taus,
                                   size_t n_taus,
                                   double *out);

/**
 * Serializes the model to JSON. Free the result with [`qpma_string_free`].
 * Returns NULL on failure.
 *
 * # Safety
 * `model` must be a live handle.
 */
char *qpma_model_to_json(const struct QpmaModel *model);

/**
 * Copy of the last error message on this thread, or NULL if the last call
 * succeeded. Free with [`qpma_string_free`].
 */
char *qpma_last_error(void);

/**
 * Frees a string returned by this library. Passing NULL is a no-op.
 *
 * # Safety
 * `s` must come from this library and not have been freed already.
 */
void qpma_string_free(char *s);

/**
 * Library version, a static NUL-terminated string.
 */
const char *qpma_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QPMA_H */
