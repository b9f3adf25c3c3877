#ifndef PROXY_AUDIT_H
#define PROXY_AUDIT_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PaStatus {
  PA_STATUS_OK = 0,
  PA_STATUS_NULL_ARGUMENT = 1,
  PA_STATUS_INVALID_UTF8 = 2,
  // A JSON document (program, model, options, config or policy) was rejected.
  PA_STATUS_PARSE = 3,
  // The dataset could not be read or does not fit the program.
  PA_STATUS_DATA = 4,
  PA_STATUS_DETECT = 5,
  PA_STATUS_REPAIR = 6,
  // The oracle left witnesses unjudged.
  PA_STATUS_SUSPENDED = 7,
  PA_STATUS_PANIC = 8,
} PaStatus;

// Opaque dataset handle.
typedef struct PaDataset PaDataset;

// Opaque program handle.
typedef struct PaProgram PaProgram;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. The pointer is
// valid until the next call into the library on the same thread.
const char *pa_last_error(void);

// # Safety
// `s` must come from this library and not be freed yet, or be NULL.
void pa_string_free(char *s);

// Parses a program from its JSON form.
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum PaStatus pa_program_from_json(const char *json, struct PaProgram **out);

// Translates a model document (tree, linear model, rule list or CART text
// dump) using the dataset's category codes.
//
// # Safety
// `doc` must be a NUL-terminated string, `data` a live handle and `out`
// writable.
enum PaStatus pa_program_load_model(const char *doc,
                                    const struct PaDataset *data,
                                    struct PaProgram **out);

// # Safety
// `p` must be a live handle and `out` writable. Free the result with
// [`pa_string_free`].
enum PaStatus pa_program_to_json(const struct PaProgram *p, char **out);

// # Safety
// `p` must be a live handle.
size_t pa_program_size(const struct PaProgram *p);

// # Safety
// `p` must come from this library and not be freed yet, or be NULL.
void pa_program_free(struct PaProgram *p);

// Loads a CSV file. `options_json` holds the load options, at least
// `{"protected": "<column>"}`.
//
// # Safety
// Both strings must be NUL-terminated; `out` must be writable.
enum PaStatus pa_dataset_load_csv(const char *path,
                                  const char *options_json,
                                  struct PaDataset **out);

// Like [`pa_dataset_load_csv`] for CSV text held in memory.
//
// # Safety
// Both strings must be NUL-terminated; `out` must be writable.
enum PaStatus pa_dataset_parse_csv(const char *csv,
                                   const char *options_json,
                                   struct PaDataset **out);

// # Safety
// `d` must be a live handle.
size_t pa_dataset_rows(const struct PaDataset *d);

// # Safety
// `d` must come from this library and not be freed yet, or be NULL.
void pa_dataset_free(struct PaDataset *d);

// Normalized mutual information between two discrete sequences of length
// `n`, each value taken as a category.
//
// # Safety
// `xs` and `zs` must point to `n` readable doubles; `out` must be writable.
enum PaStatus pa_association(const double *xs, const double *zs, size_t n, double *out);

// Runs detection and writes the witness report as JSON. `config_json` is
// an audit configuration, at least `{"epsilon": e, "delta": d}`.
//
// # Safety
// Handles must be live, `config_json` NUL-terminated and `out` writable.
// Free the result with [`pa_string_free`].
enum PaStatus pa_detect(const struct PaProgram *p,
                        const struct PaDataset *data,
                        const char *config_json,
                        char **out);

// Repairs `p` against a policy document until the policy approves every
// remaining witness. Utility is accuracy on the dataset's label column
// when it has one, else agreement with `p`. Writes the repaired program
// and the step log (JSON lines); `out_steps` may be NULL.
//
// # Safety
// Handles must be live, strings NUL-terminated and `out_program` writable.
enum PaStatus pa_repair(const struct PaProgram *p,
                        const struct PaDataset *data,
                        const char *config_json,
                        const char *policy_json,
                        struct PaProgram **out_program,
                        char **out_steps);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PROXY_AUDIT_H */
