#ifndef CHOICELAB_H
#define CHOICELAB_H

/* Generated by cbindgen from crates/ffi. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every call.
 */
typedef enum ClStatus {
  CL_STATUS_OK = 0,
  CL_STATUS_NULL_POINTER = 1,
  /**
   * A number outside its domain or a malformed string.
   */
  CL_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Data that breaks an invariant (bad file row, budget outside the slack band, ...).
   */
  CL_STATUS_VALIDATION = 3,
  CL_STATUS_IO = 4,
  /**
   * Data on which the requested quantity is undefined.
   */
  CL_STATUS_DEGENERATE = 5,
  /**
   * A bug: a panic was caught at the boundary.
   */
  CL_STATUS_INTERNAL = 6,
} ClStatus;

/**
 * Opaque choice dataset for one subject.
 */
typedef struct ClDataset ClDataset;

/**
 * Opaque list of datasets read from a file.
 */
typedef struct ClDatasetList ClDatasetList;

typedef struct ClDeut {
  double deut;
  /**
   * Minimum cycle mean of the constraint graph, NaN when it is acyclic.
   */
  double min_cycle_mean;
  /**
   * The index is positive only because of a zero-weight strict cycle.
   */
  bool strict_tie;
} ClDeut;

typedef struct ClFit {
  double beta;
  double rho;
  double loss;
  bool converged;
  /**
   * False when the data cannot pin down both parameters.
   */
  bool identified;
} ClFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *cl_version(void);

/**
 * Message of the last failed call on this thread, or NULL. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *cl_last_error_message(void);

/**
 * Builds a dataset from per-point returns and points invested. Round `k`
 * (zero-based) is `(r_a[k], r_b[k], t_a[k], t_b[k])`; token sums may
 * deviate from 100 by at most `slack`.
 *
 * # Safety
 * `subject_id` must be a NUL-terminated string; the four arrays must hold
 * `n` values; `out` must be writable.
 */
enum ClStatus cl_dataset_from_tokens(const char *subject_id,
                                     const double *r_a,
                                     const double *r_b,
                                     const double *t_a,
                                     const double *t_b,
                                     size_t n,
                                     double slack,
                                     struct ClDataset **out);

/**
 * Builds a dataset from unit prices and demands. Expenditure `p·x` must lie
 * within `slack` percent of one.
 *
 * # Safety
 * As for [`cl_dataset_from_tokens`].
 */
enum ClStatus cl_dataset_from_prices(const char *subject_id,
                                     const double *p_a,
                                     const double *p_b,
                                     const double *x_a,
                                     const double *x_b,
                                     size_t n,
                                     double slack,
                                     struct ClDataset **out);

/**
 * Reads every subject of a choice CSV file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum ClStatus cl_dataset_read_csv(const char *path, double slack, struct ClDatasetList **out);

/**
 * # Safety
 * `list` must come from [`cl_dataset_read_csv`]; `out` must be writable.
 */
enum ClStatus cl_dataset_list_len(const struct ClDatasetList *list, size_t *out);

/**
 * Copies subject `index` of the list into a new dataset handle.
 *
 * # Safety
 * `list` must come from [`cl_dataset_read_csv`]; `out` must be writable.
 */
enum ClStatus cl_dataset_list_get(const struct ClDatasetList *list,
                                  size_t index,
                                  struct ClDataset **out);

/**
 * # Safety
 * `list` must be NULL or come from [`cl_dataset_read_csv`] and not be freed twice.
 */
void cl_dataset_list_free(struct ClDatasetList *list);

/**
 * # Safety
 * `ds` must be NULL or a live handle, not freed twice.
 */
void cl_dataset_free(struct ClDataset *ds);

/**
 * # Safety
 * `ds` must be a live handle; `out` must be writable.
 */
enum ClStatus cl_dataset_len(const struct ClDataset *ds, size_t *out);

/**
 * Number of rounds rescaled onto the budget line when read.
 *
 * # Safety
 * `ds` must be a live handle; `out` must be writable.
 */
enum ClStatus cl_dataset_rescaled_count(const struct ClDataset *ds, size_t *out);

/**
 * Critical cost efficiency index in `[0, 1]`.
 *
 * # Safety
 * `ds` must be a live handle; `out` must be writable.
 */
enum ClStatus cl_ccei(const struct ClDataset *ds, double *out);

/**
 * Deviation from expected utility; zero when the data are EU-rationalizable.
 *
 * # Safety
 * `ds` must be a live handle; `out` must be writable.
 */
enum ClStatus cl_deut(const struct ClDataset *ds, struct ClDeut *out);

/**
 * Rounds holding strictly more of the strictly more expensive security.
 *
 * # Safety
 * `ds` must be a live handle; `out` must be writable.
 */
enum ClStatus cl_fosd_count(const struct ClDataset *ds, size_t *out);

/**
 * Least-squares disappointment-aversion fit with the default grid and
 * refinement settings.
 *
 * # Safety
 * `ds` must be a live handle; `out` must be writable.
 */
enum ClStatus cl_recover_params(const struct ClDataset *ds, struct ClFit *out);

/**
 * Optimal demand on the unit budget at prices `(p_a, p_b)`.
 *
 * # Safety
 * `x_a` and `x_b` must be writable.
 */
enum ClStatus cl_optimal_demand(double p_a,
                                double p_b,
                                double beta,
                                double rho,
                                double *x_a,
                                double *x_b);

/**
 * Fills `r_a` and `r_b` with `n` random budgets drawn from `seed`.
 *
 * # Safety
 * `r_a` and `r_b` must have room for `n` values.
 */
enum ClStatus cl_generate_budgets(uint64_t seed, size_t n, double *r_a, double *r_b);

/**
 * Optimal choices of `(beta, rho)` on the budgets `(r_a[k], r_b[k])`.
 *
 * # Safety
 * `subject_id` must be a NUL-terminated string; the arrays must hold `n`
 * values; `out` must be writable.
 */
enum ClStatus cl_simulate(const char *subject_id,
                          double beta,
                          double rho,
                          const double *r_a,
                          const double *r_b,
                          size_t n,
                          struct ClDataset **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CHOICELAB_H */
