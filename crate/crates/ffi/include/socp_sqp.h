/* Generated by cbindgen. Do not edit. */

#ifndef SOCP_SQP_H
#define SOCP_SQP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum {
  SOCP_ERROR_OK = 0,
  SOCP_ERROR_NULL_POINTER = 1,
  SOCP_ERROR_INVALID_UTF8 = 2,
  SOCP_ERROR_PARSE = 3,
  SOCP_ERROR_INVALID_CONFIG = 4,
  SOCP_ERROR_BUFFER_TOO_SMALL = 5,
  SOCP_ERROR_PANIC = 6,
} SocpError;

/**
 * Termination status of a solve.
 */
typedef enum {
  SOCP_SOLVE_STATUS_OPTIMAL = 0,
  SOCP_SOLVE_STATUS_INFEASIBLE = 1,
  SOCP_SOLVE_STATUS_ITERATION_LIMIT = 2,
  SOCP_SOLVE_STATUS_SUBPROBLEM_FAILURE = 3,
} SocpSolveStatus;

/**
 * Opaque problem handle.
 */
typedef struct SocpProblem SocpProblem;

/**
 * Opaque solve report handle.
 */
typedef struct SocpReport SocpReport;

/**
 * Solver options exposed to C. Obtain defaults from [`socp_config_default`].
 */
typedef struct {
  double tol;
  size_t max_iters;
  size_t max_inner_iters;
  bool enable_soc_step;
} SocpConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failure on this thread, or an empty string.
 * The pointer stays valid until the next call into this library on the
 * same thread.
 */
const char *socp_last_error(void);

/**
 * Default solver options.
 */
SocpConfig socp_config_default(void);

/**
 * Reads a problem from the JSON instance format.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
SocpError socp_problem_from_json(const char *json, SocpProblem **out);

/**
 * Reads a problem from CBF text.
 *
 * # Safety
 * `cbf` must be a NUL-terminated string and `out` a valid pointer.
 */
SocpError socp_problem_from_cbf(const char *cbf, SocpProblem **out);

/**
 * Number of variables, including those introduced by the CBF mapping.
 * Returns 0 for a null handle.
 *
 * # Safety
 * `problem` must be null or a live handle.
 */
size_t socp_problem_num_vars(const SocpProblem *problem);

/**
 * Releases a problem. Null is ignored.
 *
 * # Safety
 * `problem` must be null or a handle not yet freed.
 */
void socp_problem_free(SocpProblem *problem);

/**
 * Solves a problem. `config` may be null for defaults. A report is
 * produced for every termination status; inspect it with
 * [`socp_report_status`].
 *
 * # Safety
 * `problem` must be a live handle, `config` null or valid, `out` valid.
 */
SocpError socp_solve(const SocpProblem *problem, const SocpConfig *config, SocpReport **out);

/**
 * # Safety
 * `report` must be a live handle.
 */
SocpSolveStatus socp_report_status(const SocpReport *report);

/**
 * # Safety
 * `report` must be a live handle.
 */
double socp_report_kkt_error(const SocpReport *report);

/**
 * Objective at the returned point, in the sense of the input file.
 *
 * # Safety
 * `report` must be a live handle.
 */
double socp_report_objective(const SocpReport *report);

/**
 * # Safety
 * `report` must be a live handle.
 */
size_t socp_report_iterations(const SocpReport *report);

/**
 * Copies the primal point into `buf`. `len` is the capacity of `buf`;
 * the required length is always written to `needed` when it is non-null.
 *
 * # Safety
 * `report` must be a live handle and `buf` valid for `len` writes.
 */
SocpError socp_report_x(const SocpReport *report, double *buf, size_t len, size_t *needed);

/**
 * Releases a report. Null is ignored.
 *
 * # Safety
 * `report` must be null or a handle not yet freed.
 */
void socp_report_free(SocpReport *report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SOCP_SQP_H */
