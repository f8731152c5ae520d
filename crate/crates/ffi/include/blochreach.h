#ifndef BLOCHREACH_H
#define BLOCHREACH_H

/* Generated from the Rust crate by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status code returned by every fallible call.
typedef enum BrStatus {
  // Success.
  BrStatus_Ok = 0,
  // A required pointer argument was null.
  BrStatus_NullArgument = 1,
  // An argument failed validation; see `br_last_error`.
  BrStatus_InvalidArgument = 2,
  // A path or file operation failed; see `br_last_error`.
  BrStatus_Io = 3,
  // The computation failed; see `br_last_error`.
  BrStatus_Runtime = 4,
  // The provided buffer is too small; see `br_last_error` for the size.
  BrStatus_BufferTooSmall = 5,
} BrStatus;

// Opaque handle to a parsed run configuration.
typedef struct BrConfig BrConfig;

// Opaque handle to a completed run loaded from disk.
typedef struct BrRun BrRun;

// Per-stage aggregates of a loaded run. `farthest` is NaN when the stage has
// no members.
typedef struct BrStageMetrics {
  double t_final;
  double d_mult;
  size_t members;
  size_t candidates;
  double volume;
  double ball_fraction;
  double grid_fraction;
  double farthest;
} BrStageMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Version string of the library; the pointer is static.
const char *br_version(void);

// Copy the last error message of this thread into `buf` (NUL-terminated) and
// return the full message length in bytes (excluding the NUL). A zero return
// means no error has been recorded. `buf` may be null to query the length.
//
// # Safety
// `buf` must either be null or point to at least `cap` writable bytes.
size_t br_last_error(char *buf, size_t cap);

// Parse a TOML run configuration from `path`. Returns null on failure (see
// `br_last_error`). Free with `br_config_free`.
//
// # Safety
// `path` must be a NUL-terminated UTF-8 string.
struct BrConfig *br_config_load(const char *path);

// # Safety
// `config` must have been returned by `br_config_load` and not freed yet.
void br_config_free(struct BrConfig *config);

// Execute (or resume) the run described by `config`. On success the run id
// is copied into `id_buf` as a NUL-terminated string.
//
// `workers` = 0 uses all cores; `force` recomputes even when results exist.
//
// # Safety
// `config` must be a live handle from `br_config_load`; `id_buf` must point
// to at least `id_cap` writable bytes.
enum BrStatus br_estimate(const struct BrConfig *config,
                          size_t workers,
                          bool force,
                          char *id_buf,
                          size_t id_cap);

// Load a completed run from `root`/`run_id`. Returns null on failure. Free
// with `br_run_free`.
//
// # Safety
// `root` and `run_id` must be NUL-terminated UTF-8 strings.
struct BrRun *br_run_open(const char *root, const char *run_id);

// # Safety
// `run` must have been returned by `br_run_open` and not freed yet.
void br_run_free(struct BrRun *run);

// Number of stages of a loaded run; zero when `run` is null.
//
// # Safety
// `run` must be null or a live handle from `br_run_open`.
size_t br_run_stage_count(const struct BrRun *run);

// Fetch the aggregates of one stage.
//
// # Safety
// `run` must be a live handle; `out` must point to writable memory.
enum BrStatus br_run_stage_metrics(const struct BrRun *run,
                                   size_t stage,
                                   struct BrStageMetrics *out);

// Copy the member points of one stage as quadruples
// `(x1, x2, x3, best_value)` into `out`. `cap` counts quadruples; the number
// available is always written to `written`. Call with `cap` = 0 to query the
// count.
//
// # Safety
// `run` must be a live handle; `out` must point to at least `4 * cap`
// doubles when `cap` > 0; `written` must be writable.
enum BrStatus br_run_member_points(const struct BrRun *run,
                                   size_t stage,
                                   double *out,
                                   size_t cap,
                                   size_t *written);

// Exact endpoint of the piecewise-constant flow: propagate `x0` under the
// step values `v` and `n` over `[0, t_final]` and write the endpoint into
// `endpoint` (3 doubles).
//
// # Safety
// `x0` and `endpoint` must point to 3 doubles; `v` and `n` to `v_len` and
// `n_len` doubles respectively.
enum BrStatus br_propagate(double omega,
                           double gamma,
                           double kappa,
                           const double *x0,
                           double t_final,
                           const double *v,
                           size_t v_len,
                           const double *n,
                           size_t n_len,
                           double *endpoint);

// Number of ball-grid nodes for subdivision count `m`.
//
// # Safety
// `out` must be writable.
enum BrStatus br_grid_size(uint32_t m, size_t *out);

// Run the built-in oracle suite; `Ok` when every check passes.
enum BrStatus br_self_check(void);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* BLOCHREACH_H */
