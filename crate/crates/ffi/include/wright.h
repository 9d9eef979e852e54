#ifndef WRIGHT_H
#define WRIGHT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum WrightStatus {
  WRIGHT_STATUS_OK = 0,
  WRIGHT_STATUS_NULL_POINTER = 1,
  /**
   * Bad argument, configuration or schema.
   */
  WRIGHT_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Rank deficiency, singular covariance, degenerate system.
   */
  WRIGHT_STATUS_NUMERICAL = 3,
  WRIGHT_STATUS_IO = 4,
  /**
   * A Rust panic was caught at the boundary.
   */
  WRIGHT_STATUS_INTERNAL = 5,
} WrightStatus;

/**
 * A causal graph.
 */
typedef struct WrightDag WrightDag;

/**
 * A market dataset.
 */
typedef struct WrightDataset WrightDataset;

/**
 * A fitted GMM or CUE model.
 */
typedef struct WrightFit WrightFit;

/**
 * Tariff counterfactual outcome; welfare terms are ratios to base revenue.
 */
typedef struct WrightTariffOutcome {
  double pass_through_c;
  double delta_p;
  double delta_y;
  double p_star;
  double y_star;
  double cs_change_ratio;
  double revenue_ratio;
  double welfare_sum;
} WrightTariffOutcome;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or NULL. Owned by
 * the library.
 */
const char *wright_last_error(void);

/**
 * Releases a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void wright_string_free(char *s);

/**
 * Simulates `n` markets from a JSON experiment config (`"{}"` gives the
 * defaults) with the given seed.
 *
 * # Safety
 * `config_json` must be a NUL-terminated string; `out` a valid pointer.
 */
enum WrightStatus wright_dataset_simulate(const char *config_json,
                                          uintptr_t n,
                                          uint64_t seed,
                                          struct WrightDataset **out);

/**
 * Reads a dataset CSV (`P,Y,ZD1..,ZS1..,W1..`).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` a valid pointer.
 */
enum WrightStatus wright_dataset_read_csv(const char *path,
                                          bool add_constant,
                                          struct WrightDataset **out);

/**
 * Number of observations, or 0 for NULL.
 *
 * # Safety
 * `data` must be NULL or a live dataset handle.
 */
uintptr_t wright_dataset_len(const struct WrightDataset *data);

/**
 * # Safety
 * `data` must be NULL or a handle not yet freed.
 */
void wright_dataset_free(struct WrightDataset *data);

/**
 * Estimates the elasticities. `estimator_json` is an estimator config
 * object (NULL or `"{}"` for the defaults: two-step GMM, centered
 * covariance, least-squares partialing).
 *
 * # Safety
 * `data` must be a live handle; `estimator_json` NULL or NUL-terminated;
 * `out` a valid pointer.
 */
enum WrightStatus wright_estimate(const struct WrightDataset *data,
                                  const char *estimator_json,
                                  struct WrightFit **out);

/**
 * # Safety
 * `fit` must be a live handle; `a` and `b` valid pointers.
 */
enum WrightStatus wright_fit_theta(const struct WrightFit *fit, double *a, double *b);

/**
 * # Safety
 * `fit` must be a live handle; `se_a` and `se_b` valid pointers.
 */
enum WrightStatus wright_fit_std_errors(const struct WrightFit *fit, double *se_a, double *se_b);

/**
 * Full fit as JSON; free the result with `wright_string_free`.
 *
 * # Safety
 * `fit` must be a live handle; `out` a valid pointer.
 */
enum WrightStatus wright_fit_to_json(const struct WrightFit *fit, char **out);

/**
 * # Safety
 * `fit` must be NULL or a handle not yet freed.
 */
void wright_fit_free(struct WrightFit *fit);

/**
 * Anderson-Rubin statistic `S(a, b)` on least-squares partialed data with
 * the centered covariance.
 *
 * # Safety
 * `data` must be a live handle; `out` a valid pointer.
 */
enum WrightStatus wright_ar_statistic(const struct WrightDataset *data,
                                      double a,
                                      double b,
                                      double *out);

/**
 * Equilibrium and welfare effects of a tariff `tau` from a zero baseline.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum WrightStatus wright_apply_tariff(double alpha1,
                                      double beta1,
                                      double tau,
                                      struct WrightTariffOutcome *out);

/**
 * The built-in demand/supply graph, optionally with the control node `W`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum WrightStatus wright_dag_builtin(bool include_w, struct WrightDag **out);

/**
 * Parses the edge-list text format (`parent -> child`, `latent: A, B`).
 *
 * # Safety
 * `text` must be NUL-terminated; `out` a valid pointer.
 */
enum WrightStatus wright_dag_parse(const char *text, struct WrightDag **out);

/**
 * # Safety
 * `dag` must be NULL or a handle not yet freed.
 */
void wright_dag_free(struct WrightDag *dag);

/**
 * Whether `x` and `y` are d-separated given `z`. Each set is a
 * comma-separated list of node labels; `z` may be NULL or empty.
 *
 * # Safety
 * `dag` must be a live handle; `x`, `y` NUL-terminated; `z` NULL or
 * NUL-terminated; `out` a valid pointer.
 */
enum WrightStatus wright_dag_d_separated(const struct WrightDag *dag,
                                         const char *x,
                                         const char *y,
                                         const char *z,
                                         bool *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WRIGHT_H */
