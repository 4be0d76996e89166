#ifndef UPLIFT_H
#define UPLIFT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum UpliftStatus {
  UPLIFT_STATUS_OK = 0,
  UPLIFT_STATUS_NULL_POINTER = 1,
  UPLIFT_STATUS_INVALID_ARGUMENT = 2,
  UPLIFT_STATUS_FIELD = 3,
  UPLIFT_STATUS_MARGINAL = 4,
  UPLIFT_STATUS_RISK = 5,
  UPLIFT_STATUS_LIFT = 6,
  UPLIFT_STATUS_SYNTH = 7,
  UPLIFT_STATUS_DIRECT_SAMPLING = 8,
  UPLIFT_STATUS_CONFIG = 9,
  UPLIFT_STATUS_PIPELINE = 10,
  UPLIFT_STATUS_PANIC = 11,
} UpliftStatus;

/**
 * Which quantity [`uplift_marginal_eval`] computes.
 */
typedef enum UpliftMarginalFn {
  UPLIFT_MARGINAL_FN_DENSITY = 0,
  UPLIFT_MARGINAL_FN_CDF = 1,
  UPLIFT_MARGINAL_FN_SURVIVAL = 2,
  UPLIFT_MARGINAL_FN_QUANTILE = 3,
  UPLIFT_MARGINAL_FN_TO_UNIFORM = 4,
  UPLIFT_MARGINAL_FN_FROM_UNIFORM = 5,
  UPLIFT_MARGINAL_FN_TO_PARETO = 6,
} UpliftMarginalFn;

/**
 * Which quantity [`uplift_gpd`] computes.
 */
typedef enum UpliftGpdFn {
  UPLIFT_GPD_FN_SURVIVAL = 0,
  UPLIFT_GPD_FN_CDF = 1,
  UPLIFT_GPD_FN_DENSITY = 2,
  UPLIFT_GPD_FN_QUANTILE = 3,
} UpliftGpdFn;

/**
 * Fitted spliced kernel/GPD margin.
 */
typedef struct UpliftMarginal UpliftMarginal;

/**
 * Replicated gridded data.
 */
typedef struct UpliftStack UpliftStack;

/**
 * Direct Sampling parameters as passed over the C boundary.
 */
typedef struct UpliftDsParams {
  size_t n_neighbors;
  double dist_threshold;
  double scan_fraction;
  double coord_weight;
  uint64_t seed;
} UpliftDsParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or an empty string.
 * Valid until the next call into this library on the same thread.
 */
const char *uplift_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *uplift_version(void);

/**
 * Build a stack from `m * nx * ny` row-major values, replicates concatenated.
 *
 * # Safety
 * `values` must point to `len` readable doubles; `result` must be writable.
 */
enum UpliftStatus uplift_stack_new(size_t nx,
                                   size_t ny,
                                   double x0,
                                   double y0,
                                   double dx,
                                   double dy,
                                   size_t m,
                                   const double *values,
                                   size_t len,
                                   struct UpliftStack **result);

/**
 * Read a stack; `format` is `binary` or `csv-long`.
 *
 * # Safety
 * `path` and `format` must be NUL-terminated strings; `result` must be writable.
 */
enum UpliftStatus uplift_stack_load(const char *path,
                                    const char *format,
                                    struct UpliftStack **result);

/**
 * # Safety
 * `stack` must be a live handle; `path` and `format` NUL-terminated strings.
 */
enum UpliftStatus uplift_stack_save(const struct UpliftStack *stack,
                                    const char *path,
                                    const char *format);

/**
 * Grid shape and replicate count; any output pointer may be null.
 *
 * # Safety
 * `stack` must be a live handle; non-null outputs must be writable.
 */
enum UpliftStatus uplift_stack_shape(const struct UpliftStack *stack,
                                     size_t *nx,
                                     size_t *ny,
                                     size_t *m);

/**
 * Copy all values into `buffer`, which must hold exactly `m * nx * ny` doubles.
 *
 * # Safety
 * `stack` must be a live handle; `buffer` must point to `len` writable doubles.
 */
enum UpliftStatus uplift_stack_values(const struct UpliftStack *stack, double *buffer, size_t len);

/**
 * # Safety
 * `stack` must be null or a handle not yet freed.
 */
void uplift_stack_free(struct UpliftStack *stack);

/**
 * Fit the spliced margin to a sample; `estimator` is `moment`, `hill`, `ml`
 * or `ml-nonpositive`.
 *
 * # Safety
 * `sample` must point to `n` doubles; `estimator` must be NUL-terminated;
 * `result` must be writable.
 */
enum UpliftStatus uplift_marginal_fit(const double *sample,
                                      size_t n,
                                      double p_u,
                                      const char *estimator,
                                      struct UpliftMarginal **result);

/**
 * Threshold, GPD scale and shape, exceedance probability and kernel
 * bandwidth; any output pointer may be null.
 *
 * # Safety
 * `model` must be a live handle; non-null outputs must be writable.
 */
enum UpliftStatus uplift_marginal_params(const struct UpliftMarginal *model,
                                         double *u,
                                         double *sigma,
                                         double *xi,
                                         double *p_u,
                                         double *bandwidth);

/**
 * Evaluate the fitted margin at `x`.
 *
 * # Safety
 * `model` must be a live handle; `result` must be writable.
 */
enum UpliftStatus uplift_marginal_eval(const struct UpliftMarginal *model,
                                       enum UpliftMarginalFn which,
                                       double x,
                                       double *result);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void uplift_marginal_free(struct UpliftMarginal *model);

/**
 * Generalized Pareto function of an excess `y` (or probability for the quantile).
 *
 * # Safety
 * `result` must be writable.
 */
enum UpliftStatus uplift_gpd(enum UpliftGpdFn which,
                             double y,
                             double sigma,
                             double xi,
                             double *result);

/**
 * Summary `V` of one uniform-scale field under `functional` (`max`, `min`,
 * `mean`, `median`, `site:<i>` or `order:<k>`).
 *
 * # Safety
 * `x_u` must point to `n` doubles; `functional` must be NUL-terminated;
 * `result` must be writable.
 */
enum UpliftStatus uplift_risk_summary(const char *functional,
                                      const double *x_u,
                                      size_t n,
                                      double *result);

/**
 * Uniform-scale return level for a period of `period` replicates;
 * `convention` is `extremal-coefficient` or `theta-over-period`.
 *
 * # Safety
 * `convention` must be NUL-terminated; `result` must be writable.
 */
enum UpliftStatus uplift_return_level(double theta,
                                      double period,
                                      const char *convention,
                                      double *result);

/**
 * Post-processed lifting map of a single uniform-scale value.
 *
 * # Safety
 * `result` must be writable.
 */
enum UpliftStatus uplift_lift_value(double x, double s, double u_marg, double *result);

/**
 * Extract the `top_k` declustered events of a uniform-scale stack and lift
 * them to `count` fields with summaries drawn in `[v1, v2]`.
 *
 * # Safety
 * `stack` must be a live handle; `functional` NUL-terminated; `result` writable.
 */
enum UpliftStatus uplift_lift_top_events(const struct UpliftStack *stack,
                                         const char *functional,
                                         size_t top_k,
                                         size_t min_separation,
                                         double v1,
                                         double v2,
                                         double u_marg,
                                         uint64_t seed,
                                         size_t count,
                                         struct UpliftStack **result);

/**
 * Simulate `m` fields on the `nx` by `ny` unit-square grid with exponential
 * covariance. `family` is `gaussian` or `student:<nu>`; `margin` is `none`,
 * `exponential` or `log-gaussian`.
 *
 * # Safety
 * `family` and `margin` must be NUL-terminated; `result` must be writable.
 */
enum UpliftStatus uplift_synth(size_t nx,
                               size_t ny,
                               size_t m,
                               double range,
                               double variance,
                               const char *family,
                               const char *margin,
                               uint64_t seed,
                               struct UpliftStack **result);

/**
 * Defaults: 20 neighbors, threshold 0.05, scan fraction 0.5, coordinate weight 0.1, seed 0.
 */
struct UpliftDsParams uplift_ds_default_params(void);

/**
 * `count` realizations on an `nx` by `ny` unit-square grid, or on the
 * training grid when `nx` or `ny` is 0.
 *
 * # Safety
 * `training` must be a live handle; `params` readable; `result` writable.
 */
enum UpliftStatus uplift_ds_simulate(const struct UpliftStack *training,
                                     size_t nx,
                                     size_t ny,
                                     const struct UpliftDsParams *params,
                                     size_t count,
                                     struct UpliftStack **result);

/**
 * Run the full pipeline from a config file. When the run has holdout
 * events and `coverage_fraction` is non-null, the share of covered holdout
 * statistics is written there (otherwise NaN).
 *
 * # Safety
 * `config_path` must be NUL-terminated; `coverage_fraction` null or writable.
 */
enum UpliftStatus uplift_run_pipeline(const char *config_path, double *coverage_fraction);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* UPLIFT_H */
