#ifndef MIXCAST_H
#define MIXCAST_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result code of every fallible call.
 */
typedef enum MixcastStatus {
  MIXCAST_STATUS_OK = 0,
  MIXCAST_STATUS_NULL_POINTER = 1,
  MIXCAST_STATUS_INVALID_INPUT = 2,
  MIXCAST_STATUS_DIMENSION_MISMATCH = 3,
  MIXCAST_STATUS_NOT_POSITIVE_DEFINITE = 4,
  MIXCAST_STATUS_SINGULAR = 5,
  MIXCAST_STATUS_PARSE = 6,
  /*
   A Rust panic was caught at the boundary.
   */
  MIXCAST_STATUS_INTERNAL = 7,
} MixcastStatus;

/*
 Estimation mode, passed as a `uint32_t`.
 */
typedef enum MixcastMode {
  MIXCAST_MODE_BACKWARD = 0,
  MIXCAST_MODE_FORWARD = 1,
  MIXCAST_MODE_COMBINED = 2,
} MixcastMode;

/*
 Everything needed to solve for the mixture weights.
 */
typedef struct MixcastEstimator MixcastEstimator;

/*
 A Gaussian mixture together with the weights it was loaded with.
 */
typedef struct MixcastModel MixcastModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *mixcast_version(void);

/*
 Copies the last error message of this thread into `buf`, truncating and
 always NUL-terminating when `len > 0`. Returns the buffer size needed for
 the whole message including the terminator, or 0 when no call on this
 thread has failed yet.

 # Safety
 `buf` must be null or valid for `len` bytes.
 */
size_t mixcast_last_error_message(char *buf, size_t len);

/*
 Parses a mixture from JSON with fields `components` (each with `mu` and
 `sigma`) and `weights`.

 # Safety
 `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MixcastStatus mixcast_model_from_json(const char *json, struct MixcastModel **out);

/*
 # Safety
 `model` must be null or a handle from [`mixcast_model_from_json`] that
 has not been freed.
 */
void mixcast_model_free(struct MixcastModel *model);

/*
 Number of components and number of assets.

 # Safety
 `model` must be a live handle; the out pointers must be valid.
 */
enum MixcastStatus mixcast_model_dims(const struct MixcastModel *model,
                                      size_t *n_components,
                                      size_t *n_assets);

/*
 Mixture mean (`n_assets` values) and covariance (`n_assets^2`,
 row-major). `weights` may be null to use the weights stored with the
 model; otherwise it holds `n_weights` entries.

 # Safety
 Pointers must be valid for the stated lengths.
 */
enum MixcastStatus mixcast_model_moments(const struct MixcastModel *model,
                                         const double *weights,
                                         size_t n_weights,
                                         double *mean_out,
                                         size_t n_assets,
                                         double *cov_out);

/*
 Builds an estimator from the model, a prior JSON (`lambda_hat_minus`,
 `phi`) and an observation JSON (`x_m`, `x_u_star`, `params`).
 `covariance` is null for the mixture covariance, or an
 `n_assets^2` row-major matrix shared by both rational investors.

 # Safety
 Strings must be NUL-terminated; `covariance` must be null or valid for
 `n_assets^2` values.
 */
enum MixcastStatus mixcast_estimator_new(const struct MixcastModel *model,
                                         const char *prior_json,
                                         const char *observation_json,
                                         const double *covariance,
                                         struct MixcastEstimator **out);

/*
 # Safety
 `est` must be null or a live handle from [`mixcast_estimator_new`].
 */
void mixcast_estimator_free(struct MixcastEstimator *est);

/*
 Solves for the mixture weights. `mode` is a [`MixcastMode`] value.
 Writes `n_components` weights to `lambda_out`; `objective_out` and
 `converged_out` may be null.

 # Safety
 `est` must be a live handle and `lambda_out` valid for `n_components`
 values.
 */
enum MixcastStatus mixcast_estimate(const struct MixcastEstimator *est,
                                    uint32_t mode,
                                    double *lambda_out,
                                    size_t n_components,
                                    double *objective_out,
                                    bool *converged_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MIXCAST_H */
