#ifndef PCDOA_H
#define PCDOA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum PcdoaStatus {
  PCDOA_STATUS_OK = 0,
  PCDOA_STATUS_NULL_POINTER = 1,
  PCDOA_STATUS_INVALID_ARGUMENT = 2,
  PCDOA_STATUS_DEGENERATE = 3,
  PCDOA_STATUS_NUMERICAL = 4,
  PCDOA_STATUS_BUFFER_TOO_SMALL = 5,
  PCDOA_STATUS_PANIC = 6,
} PcdoaStatus;

/**
 * Stage selector values accepted by the `stage` parameters.
 */
typedef enum PcdoaStage {
  PCDOA_STAGE_ONE = 1,
  PCDOA_STAGE_TWO = 2,
} PcdoaStage;

/**
 * Opaque estimator with prebuilt dictionaries.
 */
typedef struct PcdoaEstimator PcdoaEstimator;

/**
 * Opaque estimation result.
 */
typedef struct PcdoaResult PcdoaResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *pcdoa_last_error_message(void);

/**
 * Creates an estimator for an `num_sensors`-element array whose first
 * `num_calibrated` sensors are calibrated. `num_sources = 0` selects the
 * threshold peak rule; `noise_var < 0` estimates the noise variance.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum PcdoaStatus pcdoa_estimator_new(uint32_t num_sensors,
                                     uint32_t num_calibrated,
                                     uint32_t num_sources,
                                     double noise_var,
                                     struct PcdoaEstimator **out);

/**
 * Releases an estimator; null is ignored.
 *
 * # Safety
 * `est` must be null or a handle from [`pcdoa_estimator_new`] not yet freed.
 */
void pcdoa_estimator_free(struct PcdoaEstimator *est);

/**
 * Runs both stages on a snapshot matrix given as column-major real and
 * imaginary parts (`re[t*num_sensors + m]` is sensor `m`, snapshot `t`).
 *
 * # Safety
 * `re` and `im` must each point to `num_sensors*num_snapshots` doubles;
 * `est` must be a live estimator and `out` writable.
 */
enum PcdoaStatus pcdoa_estimate(const struct PcdoaEstimator *est,
                                const double *re,
                                const double *im,
                                size_t num_sensors,
                                size_t num_snapshots,
                                struct PcdoaResult **out);

/**
 * Releases a result; null is ignored.
 *
 * # Safety
 * `res` must be null or a handle from [`pcdoa_estimate`] not yet freed.
 */
void pcdoa_result_free(struct PcdoaResult *res);

/**
 * Sorted DOAs (degrees) of one stage. `len` receives the count even when
 * the buffer is too small.
 *
 * # Safety
 * `res` must be live; `out` must hold `capacity` doubles; `len` may be null.
 */
enum PcdoaStatus pcdoa_result_doas(const struct PcdoaResult *res,
                                   uint32_t stage,
                                   double *out,
                                   size_t capacity,
                                   size_t *len);

/**
 * Gain-phase estimate, one complex value per sensor.
 *
 * # Safety
 * `res` must be live; `re` and `im` must each hold `capacity` doubles;
 * `len` may be null.
 */
enum PcdoaStatus pcdoa_result_gain(const struct PcdoaResult *res,
                                   double *re,
                                   double *im,
                                   size_t capacity,
                                   size_t *len);

/**
 * Grid angles and normalized spectrum values (maximum 1) of one stage.
 *
 * # Safety
 * `res` must be live; `angles` and `values` must each hold `capacity`
 * doubles; `len` may be null.
 */
enum PcdoaStatus pcdoa_result_spectrum(const struct PcdoaResult *res,
                                       uint32_t stage,
                                       double *angles,
                                       double *values,
                                       size_t capacity,
                                       size_t *len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pcdoa_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PCDOA_H */
