#ifndef MFA_H
#define MFA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Initializer for [`mfa_train`].
 */
typedef enum MfaInit {
  MFA_INIT_K_MEANS = 0,
  MFA_INIT_RANDOM = 1,
  MFA_INIT_K_SUBSPACES = 2,
} MfaInit;

/**
 * Result of every fallible call.
 */
typedef enum MfaStatus {
  MFA_STATUS_OK = 0,
  /**
   * Invalid argument or shape.
   */
  MFA_STATUS_USAGE = 1,
  /**
   * Unreadable or malformed data or files.
   */
  MFA_STATUS_DATA = 2,
  /**
   * Non-positive-definite matrices or diverged training.
   */
  MFA_STATUS_NUMERICAL = 3,
  /**
   * A required pointer was null or a string was not UTF-8.
   */
  MFA_STATUS_NULL_POINTER = 4,
  /**
   * A bug inside the library; the handle may be unusable.
   */
  MFA_STATUS_PANIC = 5,
} MfaStatus;

/**
 * Opaque NDB binning.
 */
typedef struct MfaBins MfaBins;

/**
 * Opaque mixture of factor analyzers.
 */
typedef struct MfaModel MfaModel;

/**
 * Settings for [`mfa_train`]; start from [`mfa_train_options_default`].
 */
typedef struct MfaTrainOptions {
  size_t k_components;
  size_t latent_dim;
  size_t batch_size;
  double learning_rate;
  size_t max_steps;
  enum MfaInit init;
  double noise_floor;
  uint64_t seed;
} MfaTrainOptions;

/**
 * NDB summary written by [`mfa_bins_evaluate`].
 */
typedef struct MfaNdbResult {
  size_t ndb;
  size_t n_bins;
  double ndb_over_k;
  double js_divergence;
} MfaNdbResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer is
 * valid until the next call into this library from the same thread.
 */
const char *mfa_last_error(void);

/**
 * `K (d (l + 2) + 1)`.
 */
uint64_t mfa_free_param_count(size_t k, size_t d, size_t l);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum MfaStatus mfa_model_load(const char *path, struct MfaModel **out);

/**
 * # Safety
 * `model` must come from this library; `path` must be NUL-terminated.
 */
enum MfaStatus mfa_model_save(const struct MfaModel *model, const char *path);

/**
 * # Safety
 * `model` must come from this library and not be used afterwards. Null is ignored.
 */
void mfa_model_free(struct MfaModel *model);

/**
 * Writes the number of components, data dimension and latent dimension.
 *
 * # Safety
 * `model` must come from this library; the outputs must be writable.
 */
enum MfaStatus mfa_model_dims(const struct MfaModel *model, size_t *k, size_t *d, size_t *l);

struct MfaTrainOptions mfa_train_options_default(size_t k_components, size_t latent_dim);

/**
 * Initializes and trains a model on `n x d` rows.
 *
 * # Safety
 * `data` must hold `n * d` doubles; `options` and `out` must be valid.
 */
enum MfaStatus mfa_train(const double *data,
                         size_t n,
                         size_t d,
                         const struct MfaTrainOptions *options,
                         struct MfaModel **out);

/**
 * Total log-likelihood of `n` rows; `per_sample` (length `n`) may be null.
 *
 * # Safety
 * `data` must hold `n * d` doubles where `d` is the model dimension.
 */
enum MfaStatus mfa_model_log_likelihood(const struct MfaModel *model,
                                        const double *data,
                                        size_t n,
                                        double *total,
                                        double *per_sample);

/**
 * Draws `n` samples into `out` (`n * d` doubles).
 *
 * # Safety
 * `out` must have room for `n * d` doubles.
 */
enum MfaStatus mfa_model_sample(const struct MfaModel *model, size_t n, uint64_t seed, double *out);

/**
 * Fills the coordinates with `mask[j] == 0` from the most responsible
 * component; observed coordinates are copied. `x` and `out` hold `d`
 * doubles (hidden entries of `x` are ignored); `component` may be null.
 *
 * # Safety
 * `x`, `mask` and `out` must hold `d` elements each.
 */
enum MfaStatus mfa_model_inpaint(const struct MfaModel *model,
                                 const double *x,
                                 const uint8_t *mask,
                                 double *out,
                                 size_t *component);

/**
 * Fits `k_bins` Voronoi bins to `n x d` reference rows.
 *
 * # Safety
 * `data` must hold `n * d` doubles and `out` be writable.
 */
enum MfaStatus mfa_bins_fit(const double *data,
                            size_t n,
                            size_t d,
                            size_t k_bins,
                            bool whiten,
                            uint64_t seed,
                            struct MfaBins **out);

/**
 * # Safety
 * `path` must be NUL-terminated and `out` writable.
 */
enum MfaStatus mfa_bins_load(const char *path, struct MfaBins **out);

/**
 * # Safety
 * `bins` must come from this library; `path` must be NUL-terminated.
 */
enum MfaStatus mfa_bins_save(const struct MfaBins *bins, const char *path);

/**
 * # Safety
 * `bins` must come from this library and not be used afterwards. Null is ignored.
 */
void mfa_bins_free(struct MfaBins *bins);

/**
 * Compares `n` test rows (of the bins' dimension) with the reference.
 *
 * # Safety
 * `data` must hold `n * d` doubles and `out` be writable.
 */
enum MfaStatus mfa_bins_evaluate(const struct MfaBins *bins,
                                 const double *data,
                                 size_t n,
                                 struct MfaNdbResult *out);

/**
 * Mean sharpness of the first `count` of `n` images of shape `h x w x c`.
 *
 * # Safety
 * `data` must hold `n * h * w * c` doubles and `out` be writable.
 */
enum MfaStatus mfa_sharpness(const double *data,
                             size_t n,
                             size_t height,
                             size_t width,
                             size_t channels,
                             double sigma,
                             size_t count,
                             double *out);

/**
 * Log-density of one `d`-vector under a single component; for tests and
 * bindings that need per-component scores.
 *
 * # Safety
 * `x` must hold `d` doubles and `out` be writable.
 */
enum MfaStatus mfa_model_component_log_prob(const struct MfaModel *model,
                                            size_t component,
                                            const double *x,
                                            double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MFA_H */
