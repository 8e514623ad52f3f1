#ifndef TSA_H
#define TSA_H

#pragma once

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

// Result of every fallible call. Values 2–5 follow the command-line exit codes.
typedef enum TsaStatus {
  TSA_STATUS_OK = 0,
  // A required pointer argument was null, or a string was not UTF-8.
  TSA_STATUS_INVALID_ARGUMENT = 1,
  // Invalid configuration or parameter value.
  TSA_STATUS_CONFIG = 2,
  // Malformed or inconsistent input data (including I/O failures).
  TSA_STATUS_SCHEMA = 3,
  // A numerical procedure failed.
  TSA_STATUS_NUMERICAL = 4,
  // The requested operating point has no feasible solution.
  TSA_STATUS_INFEASIBLE = 5,
  // An internal invariant broke; the handle involved should be freed.
  TSA_STATUS_INTERNAL = 6,
} TsaStatus;

// Loaded network case.
typedef struct TsaCase TsaCase;

// Loaded classifier model.
typedef struct TsaModel TsaModel;

typedef struct TsaAssessment {
  // 1 when the dispatch met every operating limit.
  int32_t feasible;
  // 1 when the machines stay in synchronism.
  int32_t stable;
  // First time the angle criterion is violated; -1 when stable.
  double t_instab;
} TsaAssessment;

typedef struct TsaPrediction {
  // 1 when predicted stable, 0 otherwise.
  int32_t stable;
  // Confidence of the stability flag, 2·|score − 0.5| in [0, 1].
  double confidence;
  // Predicted time of instability in seconds; NaN when predicted stable
  // or when the model has no time classifier.
  double time_class_seconds;
  // 1 safe, 0 unsafe, -1 when no response delay was given.
  int32_t safe;
} TsaPrediction;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null if none. The
// pointer stays valid until the next failing call on this thread.
const char *tsa_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *tsa_version(void);

// Creates a handle to the bundled nine-bus case.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum TsaStatus tsa_case_wscc9(struct TsaCase **out);

// Loads and validates a case file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum TsaStatus tsa_case_load(const char *path, struct TsaCase **out);

// Number of loads, i.e. the coefficient count expected by [`tsa_assess`].
//
// # Safety
// `case` must be a live handle or null (null yields 0).
size_t tsa_case_n_loads(const struct TsaCase *case_);

// Releases a case handle. Null is ignored.
//
// # Safety
// `case` must be null or a handle from this library not yet freed.
void tsa_case_free(struct TsaCase *case_);

// Dispatches the case with every load scaled by its coefficient, applies a
// three-phase fault on `branch_id` cleared after `t_clear` seconds by
// tripping the branch, and labels the outcome with default simulation
// settings.
//
// # Safety
// `case` must be a live handle; `coeffs` must point to `n_coeffs` doubles;
// `branch_id` must be NUL-terminated; `out` must be writable.
enum TsaStatus tsa_assess(const struct TsaCase *case_,
                          const double *coeffs,
                          size_t n_coeffs,
                          const char *branch_id,
                          double t_clear,
                          struct TsaAssessment *out);

// Loads a model file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum TsaStatus tsa_model_load(const char *path, struct TsaModel **out);

// Length of the raw feature row expected by [`tsa_predict`].
//
// # Safety
// `model` must be a live handle or null (null yields 0).
size_t tsa_model_n_features(const struct TsaModel *model);

// Releases a model handle. Null is ignored.
//
// # Safety
// `model` must be null or a handle from this library not yet freed.
void tsa_model_free(struct TsaModel *model);

// Predicts from one raw (unstandardized) feature row. Pass NaN as `tau` to
// skip the safety flag.
//
// # Safety
// `model` must be a live handle; `features` must point to `n_features`
// doubles; `out` must be writable.
enum TsaStatus tsa_predict(const struct TsaModel *model,
                           const double *features,
                           size_t n_features,
                           double tau,
                           struct TsaPrediction *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TSA_H */
