#ifndef MERTON_RISK_H
#define MERTON_RISK_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. `MR_STATUS_OK` is zero.
 */
typedef enum MrStatus {
  MR_STATUS_OK = 0,
  MR_STATUS_NULL_POINTER = 1,
  MR_STATUS_INVALID_UTF8 = 2,
  MR_STATUS_PARSE_ERROR = 3,
  MR_STATUS_INVALID_INPUT = 4,
  MR_STATUS_CONDITION_VIOLATED = 5,
  MR_STATUS_NO_CLOSED_FORM_REGIME = 6,
  MR_STATUS_UNSUPPORTED_REGIME = 7,
  MR_STATUS_HYPOTHESIS_VIOLATED = 8,
  MR_STATUS_INSUFFICIENT_PATHS = 9,
  MR_STATUS_GRID_TOUCHES_BREAKPOINT = 10,
  MR_STATUS_NUMERICAL_FAILURE = 11,
  MR_STATUS_BUFFER_TOO_SMALL = 12,
  MR_STATUS_UNBOUNDED = 13,
  MR_STATUS_PANIC = 14,
} MrStatus;

/**
 * A validated problem: market, utility, optional risk bound, endowment.
 */
typedef struct MrProblem MrProblem;

/**
 * Output of [`mr_problem_solve`].
 */
typedef struct MrSolution MrSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failure on this thread, or NULL. Valid until the
 * next failing call on the same thread.
 */
const char *mr_last_error_message(void);

/**
 * Library version as a static string.
 */
const char *mr_version(void);

/**
 * Frees a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void mr_string_free(char *s);

/**
 * Parses and validates a problem from JSON.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum MrStatus mr_problem_from_json(const char *json, struct MrProblem **out);

/**
 * # Safety
 * `p` must come from [`mr_problem_from_json`] or be NULL.
 */
void mr_problem_free(struct MrProblem *p);

/**
 * Number of risky assets.
 *
 * # Safety
 * `p` must be a live problem handle.
 */
size_t mr_problem_dim(const struct MrProblem *p);

/**
 * Solves the problem. Regime outcomes (no closed form, violated
 * hypotheses) are reported through the status with `*out` left NULL.
 *
 * # Safety
 * `p` must be a live problem handle; `out` must be writable.
 */
enum MrStatus mr_problem_solve(const struct MrProblem *p, struct MrSolution **out);

/**
 * # Safety
 * `s` must come from [`mr_problem_solve`] or be NULL.
 */
void mr_solution_free(struct MrSolution *s);

/**
 * Optimal value; `MR_STATUS_UNBOUNDED` with `*out = +inf` when the
 * supremum is infinite.
 *
 * # Safety
 * `s` must be a live solution handle; `out` must be writable.
 */
enum MrStatus mr_solution_value(const struct MrSolution *s, double *out);

/**
 * Regime tag such as `"var-tight"`; a static string, do not free.
 *
 * # Safety
 * `s` must be a live solution handle.
 */
const char *mr_solution_regime(const struct MrSolution *s);

/**
 * Portfolio weights (`d` entries written to `pi`) and consumption rate at
 * time `t`. Feedback controls are evaluated at median wealth.
 *
 * # Safety
 * `s` must be a live solution handle, `pi` must hold `d` doubles and `v`
 * must be writable.
 */
enum MrStatus mr_solution_controls(const struct MrSolution *s,
                                   double t,
                                   double *pi,
                                   size_t d,
                                   double *v);

/**
 * The solution as JSON; free with [`mr_string_free`].
 *
 * # Safety
 * `s` must be a live solution handle; `out` must be writable.
 */
enum MrStatus mr_solution_to_json(const struct MrSolution *s, char **out);

/**
 * Largest admissible exposure norm under the VaR bound.
 *
 * # Safety
 * `out` must be writable.
 */
enum MrStatus mr_rho_var(double theta_norm, double alpha, double zeta, double *out);

/**
 * Largest admissible exposure norm under the ES bound.
 *
 * # Safety
 * `out` must be writable.
 */
enum MrStatus mr_rho_es(double theta_norm, double alpha, double zeta, double *out);

/**
 * Monte Carlo estimate of the optimal expected utility with its standard
 * error, from exact sampling on `n_steps` equal steps.
 *
 * # Safety
 * `p` must be a live problem handle; `mean` and `std_error` writable.
 */
enum MrStatus mr_simulate_cost(const struct MrProblem *p,
                               size_t n_paths,
                               size_t n_steps,
                               uint64_t seed,
                               double *mean,
                               double *std_error);

/**
 * HJB residual check of the unconstrained value function on an `nt × nx`
 * grid over wealth `[x_lo, x_hi]`. Writes the largest relative residual and
 * the terminal error; `*passed` is 1 when all tolerances hold.
 *
 * # Safety
 * `p` must be a live problem handle; the outputs must be writable.
 */
enum MrStatus mr_hjb_verify(const struct MrProblem *p,
                            size_t nt,
                            size_t nx,
                            double x_lo,
                            double x_hi,
                            double *max_rel_residual,
                            double *terminal_error,
                            int32_t *passed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MERTON_RISK_H */
