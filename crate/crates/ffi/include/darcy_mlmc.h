#ifndef DARCY_MLMC_H
#define DARCY_MLMC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DmStatus {
  DM_STATUS_OK = 0,
  DM_STATUS_NULL_POINTER = 1,
  DM_STATUS_INVALID_ARGUMENT = 2,
  DM_STATUS_CONFIG = 3,
  DM_STATUS_NON_STATIONARY = 4,
  DM_STATUS_NOT_CONVERGED = 5,
  DM_STATUS_NUMERICAL = 6,
  DM_STATUS_IO = 7,
  DM_STATUS_PANIC = 8,
} DmStatus;

typedef enum DmCommand {
  DM_COMMAND_CONVERGENCE = 0,
  DM_COMMAND_CGV_COMPARE = 1,
  DM_COMMAND_SOLVER_BENCH = 2,
  DM_COMMAND_MLMC = 3,
} DmCommand;

typedef enum DmModelProblem {
  /**
   * Unit source, zero pressure on the boundary, local average.
   */
  DM_MODEL_PROBLEM_POINT_AVERAGE = 0,
  /**
   * Unit pressure drop along x1, outflow through x1 = 1.
   */
  DM_MODEL_PROBLEM_OUTFLOW = 1,
} DmModelProblem;

/**
 * Parsed and validated experiment configuration.
 */
typedef struct DmExperiment DmExperiment;

/**
 * Output of one experiment run.
 */
typedef struct DmResult DmResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static string.
 */
const char *dm_version(void);

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *dm_last_error(void);

/**
 * Parses a TOML experiment configuration.
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `out` must be a valid pointer.
 */
enum DmStatus dm_experiment_from_toml(const char *toml, struct DmExperiment **out);

/**
 * Replaces the base seed of the experiment.
 *
 * # Safety
 * `exp` must come from [`dm_experiment_from_toml`] and not be freed.
 */
enum DmStatus dm_experiment_set_seed(struct DmExperiment *exp, uint64_t seed);

/**
 * Resolved configuration as TOML; release with [`dm_string_free`].
 *
 * # Safety
 * `exp` must be a live handle or null.
 */
char *dm_experiment_to_toml(const struct DmExperiment *exp);

/**
 * # Safety
 * `exp` must come from [`dm_experiment_from_toml`] (or be null) and must
 * not be used afterwards.
 */
void dm_experiment_free(struct DmExperiment *exp);

/**
 * Runs one study.
 *
 * # Safety
 * `exp` must be a live handle; `out` must be a valid pointer.
 */
enum DmStatus dm_run(const struct DmExperiment *exp, enum DmCommand command, struct DmResult **out);

/**
 * Run summary as JSON; release with [`dm_string_free`]. Null on failure.
 *
 * # Safety
 * `res` must be a live handle or null.
 */
char *dm_result_summary_json(const struct DmResult *res);

/**
 * Per-level table in the `levels.csv` format; release with
 * [`dm_string_free`].
 *
 * # Safety
 * `res` must be a live handle or null.
 */
char *dm_result_levels_csv(const struct DmResult *res);

/**
 * Writes every output file into directory `dir`.
 *
 * # Safety
 * `res` must be a live handle; `dir` a NUL-terminated path.
 */
enum DmStatus dm_result_write(const struct DmResult *res, const char *dir);

/**
 * # Safety
 * `res` must come from [`dm_run`] (or be null) and must not be used
 * afterwards.
 */
void dm_result_free(struct DmResult *res);

/**
 * # Safety
 * `s` must be a string returned by this library (or null).
 */
void dm_string_free(char *s);

/**
 * Solves one model problem for a given cell permeability on the grid with
 * `m` cells per direction in `dim` dimensions (`m^dim` values, last
 * coordinate fastest), with harmonic edge averaging and the default solver.
 * Writes the functional to `qoi_out` and, when `pressure_out` is not null,
 * the cell pressures (`m^dim` values). `iterations_out` may be null.
 *
 * # Safety
 * `k` must point to `len` doubles; `pressure_out`, if not null, to `len`
 * writable doubles; `qoi_out` must be valid.
 */
enum DmStatus dm_solve(size_t dim,
                       size_t m,
                       enum DmModelProblem problem,
                       const double *k,
                       size_t len,
                       double *pressure_out,
                       double *qoi_out,
                       size_t *iterations_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DARCY_MLMC_H */
