#ifndef KMN_H
#define KMN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum KmnStatus {
  KMN_STATUS_OK = 0,
  KMN_STATUS_NULL_POINTER = 1,
  KMN_STATUS_INVALID_ARGUMENT = 2,
  KMN_STATUS_IO = 3,
  KMN_STATUS_NUMERICAL = 4,
  KMN_STATUS_PANIC = 5,
} KmnStatus;

/**
 * A fixed mixture density.
 */
typedef struct KmnMixture KmnMixture;

/**
 * A trained filter model loaded from a checkpoint.
 */
typedef struct KmnModel KmnModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *kmn_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *kmn_version(void);

/**
 * Load a checkpoint written by `kmn train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum KmnStatus kmn_model_load(const char *path, struct KmnModel **out);

/**
 * # Safety
 * `model` must come from [`kmn_model_load`] and not be used afterwards.
 */
void kmn_model_free(struct KmnModel *model);

/**
 * Number of observations the model conditions on.
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum KmnStatus kmn_model_window(const struct KmnModel *model, size_t *out);

/**
 * Conditional density of the latent given `len` observations, oldest first.
 *
 * # Safety
 * `model` must be a live handle, `observations` must point to `len` reals
 * and `out` must be writable.
 */
enum KmnStatus kmn_model_condition(const struct KmnModel *model,
                                   const double *observations,
                                   size_t len,
                                   struct KmnMixture **out);

/**
 * Gaussian kernel mixture. Weights are laid out center-major:
 * `weights[p * n_sigmas + j]` belongs to center `p` and bandwidth `j`.
 *
 * # Safety
 * Each pointer must reference the stated number of reals; `out` must be writable.
 */
enum KmnStatus kmn_mixture_new_gaussian(const double *centers,
                                        size_t n_centers,
                                        const double *sigmas,
                                        size_t n_sigmas,
                                        const double *weights,
                                        size_t n_weights,
                                        struct KmnMixture **out);

/**
 * Von Mises kernel mixture on `(−π, π]`, laid out as in
 * [`kmn_mixture_new_gaussian`] with concentrations in place of bandwidths.
 *
 * # Safety
 * Each pointer must reference the stated number of reals; `out` must be writable.
 */
enum KmnStatus kmn_mixture_new_von_mises(const double *centers,
                                         size_t n_centers,
                                         const double *kappas,
                                         size_t n_kappas,
                                         const double *weights,
                                         size_t n_weights,
                                         struct KmnMixture **out);

/**
 * # Safety
 * `mixture` must be a live handle and not be used afterwards.
 */
void kmn_mixture_free(struct KmnMixture *mixture);

/**
 * # Safety
 * `mixture` must be a live handle; `out` must be writable.
 */
enum KmnStatus kmn_mixture_density(const struct KmnMixture *mixture, double x, double *out);

/**
 * # Safety
 * `mixture` must be a live handle; `out` must be writable.
 */
enum KmnStatus kmn_mixture_log_density(const struct KmnMixture *mixture, double x, double *out);

/**
 * Draw `n` samples into `out` from a stream keyed by `seed`.
 *
 * # Safety
 * `mixture` must be a live handle; `out` must have room for `n` reals.
 */
enum KmnStatus kmn_mixture_sample(const struct KmnMixture *mixture,
                                  uint64_t seed,
                                  size_t n,
                                  double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KMN_H */
