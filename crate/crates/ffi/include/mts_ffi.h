#ifndef MTS_FFI_H
#define MTS_FFI_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MtsStatus {
  MTS_STATUS_OK = 0,
  MTS_STATUS_NULL_POINTER = 1,
  MTS_STATUS_INVALID_INPUT = 2,
  MTS_STATUS_INVARIANT_FAILURE = 3,
  MTS_STATUS_BUFFER_TOO_SMALL = 4,
  MTS_STATUS_PANIC = 5,
} MtsStatus;

// A validated marked DAG.
typedef struct MtsDag MtsDag;

// Algorithm state bound to a DAG.
typedef struct MtsEngine MtsEngine;

// Per-step accounting.
typedef struct MtsStepResult {
  double service;
  double movement_l1;
  size_t splits;
} MtsStepResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message of this thread into `buf` (NUL-terminated,
// truncated to `len`). Returns the full message length without the NUL.
//
// # Safety
// `buf` must be null or valid for `len` bytes.
size_t mts_last_error(char *buf, size_t len);

// Builds the net DAG of a row-major `n x n` distance matrix, compressed
// when `compressed` is nonzero.
//
// # Safety
// `dist` must point to `n * n` doubles; `out` must be a valid pointer.
enum MtsStatus mts_dag_build(const double *dist, size_t n, int32_t compressed, struct MtsDag **out);

// Parses and validates DAG JSON.
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be a valid pointer.
enum MtsStatus mts_dag_from_json(const char *json, struct MtsDag **out);

// Writes the DAG's JSON into `buf`. `needed` receives the required size
// including the NUL; the call fails with `BufferTooSmall` if `len` is short.
//
// # Safety
// `dag` must come from this library; `buf` must be null or valid for `len` bytes.
enum MtsStatus mts_dag_to_json(const struct MtsDag *dag, char *buf, size_t len, size_t *needed);

// Number of points (sinks); 0 for a null handle.
//
// # Safety
// `dag` must be null or come from this library.
size_t mts_dag_num_points(const struct MtsDag *dag);

// Number of root-sink paths, saturated at `u64::MAX`; 0 for a null handle.
//
// # Safety
// `dag` must be null or come from this library.
uint64_t mts_dag_path_count(const struct MtsDag *dag);

// # Safety
// `dag` must be null or come from this library, and not be freed twice.
void mts_dag_free(struct MtsDag *dag);

// Starts the dynamics on `dag` from its arc probabilities. A non-positive
// `kappa` selects six times the comparator Lipschitz constant, which needs
// the DAG to carry its metric.
//
// # Safety
// `dag` must come from this library; `out` must be a valid pointer.
enum MtsStatus mts_engine_new(const struct MtsDag *dag, double kappa, struct MtsEngine **out);

// Serves one cost vector of length `n`.
//
// # Safety
// `engine` must come from this library; `cost` must point to `n` doubles;
// `result` must be null or valid.
enum MtsStatus mts_engine_step(struct MtsEngine *engine,
                               const double *cost,
                               size_t n,
                               struct MtsStepResult *result);

// Copies the current point marginal into `out[0..n]`.
//
// # Safety
// `engine` must come from this library; `out` must be valid for `n` doubles.
enum MtsStatus mts_engine_marginal(const struct MtsEngine *engine, double *out, size_t n);

// # Safety
// `engine` must be null or come from this library, and not be freed twice.
void mts_engine_free(struct MtsEngine *engine);

// Offline optimum of `t` cost rows (row-major `t x n`) from state `start`,
// on the diameter-normalized metric.
//
// # Safety
// `dist` must point to `n * n` doubles, `costs` to `t * n` doubles, `total` must be valid.
enum MtsStatus mts_offline_opt(const double *dist,
                               size_t n,
                               const double *costs,
                               size_t t,
                               size_t start,
                               double *total);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MTS_FFI_H */
