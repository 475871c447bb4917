#ifndef NORMLAB_H
#define NORMLAB_H

/* Generated by cbindgen from normlab-capi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes. Nonzero values align with the CLI exit codes where one
// exists for the same failure class.
typedef enum NlStatus {
  NL_STATUS_OK = 0,
  // Configuration, input, or I/O problem.
  NL_STATUS_CONFIG = 2,
  // Non-finite numerics during training or evaluation.
  NL_STATUS_NUMERIC = 3,
  // No run satisfied the selection criteria.
  NL_STATUS_SELECTION = 4,
  // Self-check suite reported failures.
  NL_STATUS_CHECK = 5,
  // A required pointer argument was null.
  NL_STATUS_NULL_ARG = 10,
  // A string argument was not valid UTF-8.
  NL_STATUS_UTF8 = 11,
  // An internal panic was caught at the boundary.
  NL_STATUS_PANIC = 12,
} NlStatus;

// An experiment bound to its parsed config and materialized datasets.
typedef struct NlExperiment NlExperiment;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// ABI revision; bump on any breaking change to this header.
uint32_t nl_abi_version(void);

// Message describing the most recent failure on this thread. Borrowed;
// valid until the next failing call. Never null.
const char *nl_last_error(void);

// Release a string returned through a `char **` out-parameter.
void nl_string_free(char *s);

// Parse a TOML experiment config and materialize its datasets.
//
// # Safety
// `config_toml` must be a valid NUL-terminated string; `out` must be a
// valid pointer.
enum NlStatus nl_experiment_new(const char *config_toml, struct NlExperiment **out);

// As [`nl_experiment_new`], reading the config from a file path.
//
// # Safety
// `path` must be a valid NUL-terminated string; `out` must be valid.
enum NlStatus nl_experiment_from_file(const char *path, struct NlExperiment **out);

// Release an experiment handle.
//
// # Safety
// `exp` must be null or a pointer obtained from an `nl_experiment_*`
// constructor, not yet freed.
void nl_experiment_free(struct NlExperiment *exp);

// Train the single run described by the config, persist its record under
// the config's output directory, and return the record as a JSON string.
// A run that diverges returns `NL_STATUS_NUMERIC` (the failed record is
// still written and returned).
//
// # Safety
// `exp` must be a live handle; `record_json` may be null (the record is
// then only persisted).
enum NlStatus nl_experiment_train(struct NlExperiment *exp, char **record_json);

// Run the config's grid with the given worker count, appending records to
// `<output_dir>/records.jsonl`. Completed cells are skipped on re-runs.
//
// # Safety
// `exp` must be a live handle.
enum NlStatus nl_experiment_run_grid(struct NlExperiment *exp, uint32_t workers);

// Select a model from the experiment's stored records. `mode` is
// `"min_norm"` or `"best_validation"`; the report is returned as JSON.
//
// # Safety
// `exp` must be a live handle; `mode` a valid string; `report_json` may be
// null.
enum NlStatus nl_experiment_select(struct NlExperiment *exp, const char *mode, char **report_json);

// Run the invariant self-check suite; returns `NL_STATUS_CHECK` with the
// failing item names in [`nl_last_error`] if anything fails.
enum NlStatus nl_self_check(void);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* NORMLAB_H */
