#ifndef SEMHALLU_H
#define SEMHALLU_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum SemhalluStatus {
  SEMHALLU_STATUS_OK = 0,
  SEMHALLU_STATUS_NULL_POINTER = 1,
  SEMHALLU_STATUS_INVALID_UTF8 = 2,
  SEMHALLU_STATUS_IO = 3,
  // Bad magic, unsupported version, truncated or trailing bytes.
  SEMHALLU_STATUS_FORMAT = 4,
  // Data that violates a bank invariant.
  SEMHALLU_STATUS_INVALID_DATA = 5,
  // Bad parameter, config or JSON.
  SEMHALLU_STATUS_INVALID_ARGUMENT = 6,
  // Too few classes or samples for the request.
  SEMHALLU_STATUS_INSUFFICIENT_DATA = 7,
  // Divergence or a failed factorization.
  SEMHALLU_STATUS_NUMERICAL = 8,
  // A bug in the library; the handle arguments should not be reused.
  SEMHALLU_STATUS_PANIC = 9,
} SemhalluStatus;

typedef struct SemhalluFeatureBank SemhalluFeatureBank;

typedef struct SemhalluResult SemhalluResult;

typedef struct SemhalluRunner SemhalluRunner;

typedef struct SemhalluSemanticBank SemhalluSemanticBank;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after a success.
// Valid until the next call on this thread.
const char *semhallu_last_error(void);

// Library version as a static NUL-terminated string.
const char *semhallu_version(void);

// Loads a feature bank file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum SemhalluStatus semhallu_feature_bank_load(const char *path, struct SemhalluFeatureBank **out);

// # Safety
// `bank` must come from this library; `path` must be NUL-terminated.
enum SemhalluStatus semhallu_feature_bank_write(const struct SemhalluFeatureBank *bank,
                                                const char *path);

// Feature dimension, or 0 for a null handle.
//
// # Safety
// `bank` must be null or come from this library.
size_t semhallu_feature_bank_dim(const struct SemhalluFeatureBank *bank);

// Number of classes over all splits, or 0 for a null handle.
//
// # Safety
// `bank` must be null or come from this library.
size_t semhallu_feature_bank_class_count(const struct SemhalluFeatureBank *bank);

// # Safety
// `bank` must be null or come from this library and not be used again.
void semhallu_feature_bank_free(struct SemhalluFeatureBank *bank);

// Loads a semantic bank file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum SemhalluStatus semhallu_semantic_bank_load(const char *path,
                                                struct SemhalluSemanticBank **out);

// # Safety
// `bank` must come from this library; `path` must be NUL-terminated.
enum SemhalluStatus semhallu_semantic_bank_write(const struct SemhalluSemanticBank *bank,
                                                 const char *path);

// Semantic dimension, or 0 for a null handle.
//
// # Safety
// `bank` must be null or come from this library.
size_t semhallu_semantic_bank_dim(const struct SemhalluSemanticBank *bank);

// # Safety
// `bank` must be null or come from this library and not be used again.
void semhallu_semantic_bank_free(struct SemhalluSemanticBank *bank);

// Generates synthetic banks from a JSON spec; null or `{}` uses defaults.
//
// # Safety
// `spec_json` must be null or NUL-terminated; both outputs must be valid
// pointers.
enum SemhalluStatus semhallu_synthetic_generate(const char *spec_json,
                                                struct SemhalluFeatureBank **features,
                                                struct SemhalluSemanticBank **semantics);

// Builds a runner over copies of the two banks, which stay owned by the
// caller. `workers` of 0 uses one thread per core.
//
// # Safety
// Both banks must come from this library; `out` must be a valid pointer.
enum SemhalluStatus semhallu_runner_new(const struct SemhalluFeatureBank *features,
                                        const struct SemhalluSemanticBank *semantics,
                                        size_t workers,
                                        struct SemhalluRunner **out);

// Runs the JSON config against the runner's banks; the config's `data`
// field is ignored.
//
// # Safety
// `runner` must come from this library, `config_json` must be
// NUL-terminated and `out` a valid pointer.
enum SemhalluStatus semhallu_runner_run(const struct SemhalluRunner *runner,
                                        const char *config_json,
                                        struct SemhalluResult **out);

// # Safety
// `runner` must be null or come from this library and not be used again.
void semhallu_runner_free(struct SemhalluRunner *runner);

// Mean episode accuracy in [0, 1], or NaN for a null handle.
//
// # Safety
// `result` must be null or come from this library.
double semhallu_result_mean_accuracy(const struct SemhalluResult *result);

// Half-width of the 95% confidence interval, or NaN for a null handle.
//
// # Safety
// `result` must be null or come from this library.
double semhallu_result_ci95(const struct SemhalluResult *result);

// Number of episodes, or 0 for a null handle.
//
// # Safety
// `result` must be null or come from this library.
size_t semhallu_result_episode_count(const struct SemhalluResult *result);

// Copies up to `len` per-episode accuracies into `out` and returns how
// many were written.
//
// # Safety
// `result` must be null or come from this library; `out` must be null or
// point to `len` writable doubles.
size_t semhallu_result_per_episode(const struct SemhalluResult *result, double *out, size_t len);

// The full results document as JSON, owned by the handle.
//
// # Safety
// `result` must be null or come from this library.
const char *semhallu_result_json(const struct SemhalluResult *result);

// # Safety
// `result` must be null or come from this library and not be used again.
void semhallu_result_free(struct SemhalluResult *result);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEMHALLU_H */
