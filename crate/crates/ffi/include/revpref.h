#ifndef REVPREF_H
#define REVPREF_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RevprefStatus {
  REVPREF_STATUS_OK = 0,
  REVPREF_STATUS_NULL_POINTER = 1,
  REVPREF_STATUS_INVALID_INPUT = 2,
  REVPREF_STATUS_INFEASIBLE = 3,
  REVPREF_STATUS_NUMERIC = 4,
  REVPREF_STATUS_ITERATION_CAP = 5,
  REVPREF_STATUS_PANIC = 6,
} RevprefStatus;

/**
 * Opaque dataset handle.
 */
typedef struct RevprefDataset RevprefDataset;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. Valid until the next
 * failing call on the same thread.
 */
const char *revpref_last_error(void);

/**
 * Parses and validates a dataset in the JSON exchange format.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum RevprefStatus revpref_dataset_from_json(const char *json, struct RevprefDataset **out);

/**
 * # Safety
 * `ds` must come from [`revpref_dataset_from_json`] and not be freed twice.
 */
void revpref_dataset_free(struct RevprefDataset *ds);

/**
 * # Safety
 * `ds` must be a live handle; the output pointers must be valid.
 */
enum RevprefStatus revpref_dataset_dims(const struct RevprefDataset *ds,
                                        uintptr_t *t,
                                        uintptr_t *m,
                                        uintptr_t *n);

/**
 * Proximity statistic of the dataset.
 *
 * # Safety
 * `ds` must be a live handle and `phi` a valid pointer.
 */
enum RevprefStatus revpref_proximity(const struct RevprefDataset *ds,
                                     double lambda_min,
                                     double *phi);

/**
 * Writes 1 to `coordinated` if the dataset passes the coordination test, else 0.
 *
 * # Safety
 * `ds` must be a live handle and `coordinated` a valid pointer.
 */
enum RevprefStatus revpref_coordination_test(const struct RevprefDataset *ds,
                                             double lambda_min,
                                             int32_t *coordinated);

/**
 * Robust estimate as a JSON object `{psi, v, objective, cv, iterations}`.
 * Release the string with [`revpref_string_free`].
 *
 * # Safety
 * `ds` must be a live handle and `out_json` a valid pointer.
 */
enum RevprefStatus revpref_robust_estimate(const struct RevprefDataset *ds,
                                           double epsilon,
                                           double delta,
                                           double radius,
                                           char **out_json);

/**
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void revpref_string_free(char *s);

/**
 * Hausdorff distance between `na` and `nb` points of dimension `dim`,
 * stored row-major.
 *
 * # Safety
 * `a` and `b` must point to `na * dim` and `nb * dim` doubles.
 */
enum RevprefStatus revpref_hausdorff(const double *a,
                                     uintptr_t na,
                                     const double *b,
                                     uintptr_t nb,
                                     uintptr_t dim,
                                     double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* REVPREF_H */
