/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef HJB_H
#define HJB_H

#include <stddef.h>
#include <stdint.h>

#define HJB_OK 0

/**
 * A required pointer argument was null.
 */
#define HJB_ERR_NULL 1

/**
 * Invalid input: configuration, dimensions, step size, time index or JSON.
 */
#define HJB_ERR_VALIDATION 2

/**
 * Numerical failure during a computation.
 */
#define HJB_ERR_NUMERIC 3

/**
 * Operation on an object in an unusable state.
 */
#define HJB_ERR_STATE 4

#define HJB_ERR_IO 5

/**
 * A string argument was not valid UTF-8.
 */
#define HJB_ERR_UTF8 6

/**
 * The library panicked; the handle arguments remain valid but results are undefined.
 */
#define HJB_ERR_PANIC 7

#define HJB_VARIANT_NEW_UPWIND 0

#define HJB_VARIANT_PRIOR_FODJO2 1

#define HJB_VARIANT_FTW_BASELINE 2

#define HJB_DELTA_LOWER_BOUNDED 0

#define HJB_DELTA_NONNEGATIVE 1

#define HJB_DELTA_GENERAL_SIGN 2

#define HJB_EXTRAPOLATE_LINEAR 0

#define HJB_EXTRAPOLATE_CLAMP 1

#define HJB_TARGETS_SAMPLED 0

#define HJB_TARGETS_QUADRATURE 1

#define HJB_TARGETS_PER_SAMPLE 2

/**
 * Max-plus value function: one set of quadratic forms per time.
 */
typedef struct HjbMaxPlusValue HjbMaxPlusValue;

/**
 * A control problem.
 */
typedef struct HjbProblem HjbProblem;

/**
 * A discretization scheme bound to a problem.
 */
typedef struct HjbScheme HjbScheme;

/**
 * Grid solution of the backward recursion.
 */
typedef struct HjbValueGrid HjbValueGrid;

/**
 * Scheme parameters. Start from `hjb_scheme_options_default` and override fields.
 */
typedef struct HjbSchemeOptions {
  /**
   * One of `HJB_VARIANT_*`.
   */
  int variant;
  /**
   * Weight order; negative selects the smallest admissible order.
   */
  int k;
  double h;
  /**
   * One of `HJB_DELTA_*`.
   */
  int delta_mode;
  /**
   * Quadrature nodes per half-axis; 0 selects the default.
   */
  size_t quadrature_nodes;
} HjbSchemeOptions;

/**
 * Max-plus sampling sizes and seed.
 */
typedef struct HjbSamplePlan {
  size_t n_in;
  size_t n_x;
  size_t n_w;
  uint64_t seed;
  double init_lo;
  double init_hi;
  /**
   * One of `HJB_TARGETS_*`.
   */
  int targets;
} HjbSamplePlan;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer stays valid until
 * the next failing call on the same thread.
 */
const char *hjb_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *hjb_version(void);

/**
 * Loads a built-in problem by name.
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` a valid pointer.
 */
int hjb_problem_builtin(const char *name, struct HjbProblem **out);

/**
 * Parses a problem from its JSON configuration.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
int hjb_problem_from_json(const char *json, struct HjbProblem **out);

/**
 * # Safety
 * `p` must be null or a handle from this library that has not been freed.
 */
void hjb_problem_free(struct HjbProblem *p);

/**
 * State dimension, or 0 for a null handle.
 *
 * # Safety
 * `p` must be null or a live handle.
 */
size_t hjb_problem_dim(const struct HjbProblem *p);

/**
 * Horizon `T`, or NaN for a null handle.
 *
 * # Safety
 * `p` must be null or a live handle.
 */
double hjb_problem_horizon(const struct HjbProblem *p);

/**
 * Exact value from the Riccati equation of a single-mode LQ problem, integrated with
 * `time_step`.
 *
 * # Safety
 * `p` must be a live handle, `x` must point to `d` doubles and `out` must be valid.
 */
int hjb_riccati_value(const struct HjbProblem *p,
                      double time_step,
                      double t,
                      const double *x,
                      size_t d,
                      double *out);

/**
 * New-upwind scheme, smallest admissible order, `h = 0.1`, default quadrature.
 */
struct HjbSchemeOptions hjb_scheme_options_default(void);

/**
 * Builds a scheme for `problem`. The scheme keeps its own copy of the problem.
 *
 * # Safety
 * `problem` must be a live handle, `options` and `out` valid pointers.
 */
int hjb_scheme_new(const struct HjbProblem *problem,
                   const struct HjbSchemeOptions *options,
                   struct HjbScheme **out);

/**
 * # Safety
 * `s` must be null or a live handle.
 */
void hjb_scheme_free(struct HjbScheme *s);

/**
 * Largest admissible step `h0`, or NaN for a null handle.
 *
 * # Safety
 * `s` must be null or a live handle.
 */
double hjb_scheme_h0(const struct HjbScheme *s);

/**
 * Solves on the box `[lo, hi]` with `n[i]` core points per axis.
 *
 * # Safety
 * `lo`, `hi` and `n` must each point to `d` elements; `scheme` and `out` must be valid.
 */
int hjb_solve_grid(const struct HjbScheme *scheme,
                   const double *lo,
                   const double *hi,
                   const size_t *n,
                   size_t d,
                   int extrapolation,
                   struct HjbValueGrid **out);

/**
 * `v^h(t, x)`; `t` must be a multiple of `h`.
 *
 * # Safety
 * `v` must be a live handle, `x` must point to `d` doubles and `out` must be valid.
 */
int hjb_value_grid_eval(const struct HjbValueGrid *v,
                        double t,
                        const double *x,
                        size_t d,
                        double *out);

/**
 * # Safety
 * `v` must be null or a live handle.
 */
void hjb_value_grid_free(struct HjbValueGrid *v);

/**
 * Runs the max-plus solver.
 *
 * # Safety
 * `scheme` must be a live handle, `plan` and `out` valid pointers.
 */
int hjb_solve_maxplus(const struct HjbScheme *scheme,
                      const struct HjbSamplePlan *plan,
                      struct HjbMaxPlusValue **out);

/**
 * Reads a value function previously written by `hjb_maxplus_to_json` or the CLI.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
int hjb_maxplus_from_json(const char *json, struct HjbMaxPlusValue **out);

/**
 * `max_z q(x, z)` over the forms stored at time `t`.
 *
 * # Safety
 * `v` must be a live handle, `x` must point to `d` doubles and `out` must be valid.
 */
int hjb_maxplus_eval(const struct HjbMaxPlusValue *v,
                     double t,
                     const double *x,
                     size_t d,
                     double *out);

/**
 * Number of forms stored at time `t`.
 *
 * # Safety
 * `v` must be a live handle and `out` valid.
 */
int hjb_maxplus_num_forms(const struct HjbMaxPlusValue *v, double t, size_t *out);

/**
 * JSON text of the value function. Release the string with `hjb_string_free`.
 *
 * # Safety
 * `v` must be a live handle and `out` valid.
 */
int hjb_maxplus_to_json(const struct HjbMaxPlusValue *v, char **out);

/**
 * # Safety
 * `v` must be null or a live handle.
 */
void hjb_maxplus_free(struct HjbMaxPlusValue *v);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must be null or a string from this library that has not been freed.
 */
void hjb_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HJB_H */
