/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef IWO_H
#define IWO_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result codes.
 */
typedef enum IwoStatus {
  IWO_STATUS_OK = 0,
  IWO_STATUS_NULL_POINTER = 1,
  IWO_STATUS_INVALID_ARGUMENT = 2,
  IWO_STATUS_IO = 3,
  IWO_STATUS_TRAINING = 4,
  IWO_STATUS_METRICS = 5,
  /*
   The factor has no basis because its run failed.
   */
  IWO_STATUS_FACTOR_FAILED = 6,
  IWO_STATUS_BUFFER_TOO_SMALL = 7,
  IWO_STATUS_PANIC = 99,
} IwoStatus;

/*
 An importance-weighted orthonormal basis of one factor.
 */
typedef struct IwoBasis IwoBasis;

/*
 A code/factor dataset.
 */
typedef struct IwoDataset IwoDataset;

/*
 Metrics of one dataset under one seed.
 */
typedef struct IwoReport IwoReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or null. The pointer
 stays valid until the next failing call on the same thread.
 */
const char *iwo_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *iwo_version(void);

/*
 Releases a string returned by this library.

 # Safety
 `s` must come from this library and not have been freed.
 */
void iwo_string_free(char *s);

/*
 Builds a dataset from `n x latent_dim` codes and `n x factors` factor values.

 # Safety
 Buffers must hold the stated number of values; `out` must be writable.
 */
enum IwoStatus iwo_dataset_new(const double *codes,
                               const double *factor_values,
                               size_t n,
                               size_t latent_dim,
                               size_t factors,
                               struct IwoDataset **out);

/*
 Loads codes and factors from CSV or binary files.

 # Safety
 Paths must be NUL-terminated; `out` must be writable.
 */
enum IwoStatus iwo_dataset_load(const char *codes_path,
                                const char *factors_path,
                                struct IwoDataset **out);

/*
 Generates a synthetic dataset from a JSON-encoded synthetic configuration,
 e.g. `{"latent_dim":10,"factors":5,"rank":2,"mapping":{"kind":"poly"}}`.

 # Safety
 `config_json` must be NUL-terminated; `out` must be writable.
 */
enum IwoStatus iwo_dataset_synthetic(const char *config_json, struct IwoDataset **out);

/*
 # Safety
 `ds` must be null or a live dataset handle.
 */
void iwo_dataset_free(struct IwoDataset *ds);

/*
 # Safety
 `ds` must be a live dataset handle.
 */
enum IwoStatus iwo_dataset_shape(const struct IwoDataset *ds,
                                 size_t *n,
                                 size_t *latent_dim,
                                 size_t *factors);

/*
 Trains every factor and computes all metrics.

 `hyper_json` may be null for defaults, or a JSON object of training
 settings (missing keys keep their defaults). `seed` overrides its seed.

 # Safety
 `ds` must be a live dataset handle; `out` must be writable.
 */
enum IwoStatus iwo_evaluate(const struct IwoDataset *ds,
                            const char *hyper_json,
                            uint64_t seed,
                            struct IwoReport **out);

/*
 # Safety
 `r` must be null or a live report handle.
 */
void iwo_report_free(struct IwoReport *r);

/*
 # Safety
 `r` must be a live report handle.
 */
enum IwoStatus iwo_report_num_factors(const struct IwoReport *r, size_t *out);

/*
 Mean IWO over factor pairs; NaN when undefined.

 # Safety
 `r` must be a live report handle.
 */
enum IwoStatus iwo_report_mean_iwo(const struct IwoReport *r, double *out);

/*
 Mean IWR over factors; NaN when undefined.

 # Safety
 `r` must be a live report handle.
 */
enum IwoStatus iwo_report_mean_iwr(const struct IwoReport *r, double *out);

/*
 Copies the `K x K` pairwise IWO matrix (NaN on the diagonal and for
 failed factors) into `buf`.

 # Safety
 `buf` must hold `len` doubles.
 */
enum IwoStatus iwo_report_pairwise_iwo(const struct IwoReport *r, double *buf, size_t len);

/*
 Copies the per-factor IWR values (NaN for failed factors) into `buf`.

 # Safety
 `buf` must hold `len` doubles.
 */
enum IwoStatus iwo_report_iwr(const struct IwoReport *r, double *buf, size_t len);

/*
 Copies the basis of one factor into a new handle.

 # Safety
 `r` must be a live report handle; `out` must be writable.
 */
enum IwoStatus iwo_report_basis(const struct IwoReport *r, size_t factor, struct IwoBasis **out);

/*
 Serializes the report as JSON. Free the result with [`iwo_string_free`].

 # Safety
 `r` must be a live report handle; `out` must be writable.
 */
enum IwoStatus iwo_report_to_json(const struct IwoReport *r, char **out);

/*
 Builds a basis from `rank x latent_dim` orthonormal rows and `rank`
 importances summing to one.

 # Safety
 Buffers must hold the stated number of values; `out` must be writable.
 */
enum IwoStatus iwo_basis_new(const double *rows,
                             const double *importance,
                             size_t rank,
                             size_t latent_dim,
                             struct IwoBasis **out);

/*
 # Safety
 `b` must be null or a live basis handle.
 */
void iwo_basis_free(struct IwoBasis *b);

/*
 # Safety
 `b` must be a live basis handle.
 */
enum IwoStatus iwo_basis_shape(const struct IwoBasis *b, size_t *rank, size_t *latent_dim);

/*
 Copies the basis rows (most important first) into `buf`.

 # Safety
 `buf` must hold `len` doubles.
 */
enum IwoStatus iwo_basis_rows(const struct IwoBasis *b, double *buf, size_t len);

/*
 # Safety
 `buf` must hold `len` doubles.
 */
enum IwoStatus iwo_basis_importance(const struct IwoBasis *b, double *buf, size_t len);

/*
 IWO of two bases in the same latent space.

 # Safety
 `a` and `b` must be live basis handles.
 */
enum IwoStatus iwo_pair_iwo(const struct IwoBasis *a, const struct IwoBasis *b, double *out);

/*
 Unweighted orthogonality of the two spans.

 # Safety
 `a` and `b` must be live basis handles.
 */
enum IwoStatus iwo_pair_orthogonality(const struct IwoBasis *a,
                                      const struct IwoBasis *b,
                                      double *out);

/*
 # Safety
 `b` must be a live basis handle.
 */
enum IwoStatus iwo_basis_iwr(const struct IwoBasis *b, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IWO_H */
