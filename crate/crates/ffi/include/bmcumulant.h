#ifndef BMCUMULANT_H
#define BMCUMULANT_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum BmStatus {
  BM_STATUS_OK = 0,
  BM_STATUS_NULL_POINTER = 1,
  BM_STATUS_INVALID_ARGUMENT = 2,
  BM_STATUS_INDEX_OUT_OF_RANGE = 3,
  BM_STATUS_TOO_LARGE = 4,
  BM_STATUS_NOT_DECIMATABLE = 5,
  BM_STATUS_PARSE = 6,
  BM_STATUS_IO = 7,
  BM_STATUS_BUFFER_TOO_SMALL = 8,
  BM_STATUS_PANIC = 9,
} BmStatus;

typedef enum BmTopology {
  BM_TOPOLOGY_FULL = 0,
  BM_TOPOLOGY_CHAIN = 1,
} BmTopology;

typedef enum BmFamily {
  BM_FAMILY_FACTORISED = 0,
  BM_FAMILY_DECIMATABLE = 1,
} BmFamily;

typedef enum BmMomentMethod {
  BM_MOMENT_METHOD_VARIATIONAL = 0,
  BM_MOMENT_METHOD_RATIO1 = 1,
  BM_MOMENT_METHOD_RATIO2 = 2,
} BmMomentMethod;

/**
 * Opaque model handle.
 */
typedef struct BmModel BmModel;

/**
 * Result of fitting a tractable model.
 */
typedef struct BmApproximation {
  /**
   * First-order estimate of `log Z`; a lower bound.
   */
  double first;
  /**
   * Second-order estimate of `log Z`.
   */
  double second;
  /**
   * 1 when the fixed-point iteration converged.
   */
  int32_t converged;
  size_t iterations;
} BmApproximation;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. The pointer is
 * valid until the next call into this library from the same thread.
 */
const char *bm_last_error_message(void);

/**
 * Creates a model with `n` nodes and all parameters zero.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for a handle.
 */
enum BmStatus bm_model_new(size_t n, struct BmModel **out);

/**
 * Draws biases and couplings on the chosen topology from `N(0, sigma^2)`.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for a handle.
 */
enum BmStatus bm_model_random(size_t n,
                              enum BmTopology topology,
                              double sigma,
                              uint64_t seed,
                              struct BmModel **out);

/**
 * Reads a `.bmtx` model file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum BmStatus bm_model_read(const char *path, struct BmModel **out);

/**
 * Writes the model in `.bmtx` format.
 *
 * # Safety
 * `model` must be a live handle; `path` must be a NUL-terminated string.
 */
enum BmStatus bm_model_write(const struct BmModel *model, const char *path);

/**
 * Releases a handle. NULL is ignored.
 *
 * # Safety
 * `model` must be NULL or a handle not yet freed.
 */
void bm_model_free(struct BmModel *model);

/**
 * Number of nodes, or 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t bm_model_n(const struct BmModel *model);

/**
 * # Safety
 * `model` must be a live handle.
 */
enum BmStatus bm_model_set_bias(struct BmModel *model, size_t i, double value);

/**
 * Sets the symmetric coupling between `i` and `j`.
 *
 * # Safety
 * `model` must be a live handle.
 */
enum BmStatus bm_model_set_coupling(struct BmModel *model, size_t i, size_t j, double value);

/**
 * # Safety
 * `model` must be a live handle.
 */
enum BmStatus bm_model_set_constant(struct BmModel *model, double value);

/**
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum BmStatus bm_model_bias(const struct BmModel *model, size_t i, double *out);

/**
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum BmStatus bm_model_coupling(const struct BmModel *model, size_t i, size_t j, double *out);

/**
 * Exact `log Z` by enumeration, refused above 24 nodes.
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum BmStatus bm_exact_log_z(const struct BmModel *model, double *out);

/**
 * Exact means into `out[0..n]`.
 *
 * # Safety
 * `model` must be a live handle; `out` must hold `len` doubles.
 */
enum BmStatus bm_exact_means(const struct BmModel *model, double *out, size_t len);

/**
 * `log Z` by summing out nodes of degree at most two; fails with
 * `NotDecimatable` when the coupling graph does not reduce.
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum BmStatus bm_decimate_log_z(const struct BmModel *model, double *out);

/**
 * Fits a tractable model and reports the first- and second-order
 * estimates. `edges` holds `edge_count` index pairs laid out flat and is
 * read only for the decimatable family.
 *
 * # Safety
 * `model` must be a live handle; `edges` must hold `2 * edge_count` values
 * when `edge_count > 0`; `out` must be writable.
 */
enum BmStatus bm_approximate(const struct BmModel *model,
                             enum BmFamily family,
                             const size_t *edges,
                             size_t edge_count,
                             struct BmApproximation *out);

/**
 * Factorised moment estimates: means into `means[0..n]`, row-major
 * `<s_i s_j>` into `correlations[0..n*n]`. Pass NULL for either output to
 * skip it.
 *
 * # Safety
 * `model` must be a live handle; non-NULL outputs must hold the given
 * number of doubles.
 */
enum BmStatus bm_moments(const struct BmModel *model,
                         enum BmMomentMethod method,
                         double *means,
                         size_t means_len,
                         double *correlations,
                         size_t correlations_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BMCUMULANT_H */
