#ifndef MINICOMMONS_H
#define MINICOMMONS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum McStatus {
  MC_STATUS_OK = 0,
  MC_STATUS_NULL_ARGUMENT = 1,
  MC_STATUS_INVALID_UTF8 = 2,
  MC_STATUS_INVALID_JSON = 3,
  MC_STATUS_NOT_FOUND = 4,
  MC_STATUS_UNAUTHENTICATED = 5,
  MC_STATUS_FORBIDDEN = 6,
  MC_STATUS_CONFLICT = 7,
  /**
   * The call completed and produced a document describing rejected input.
   */
  MC_STATUS_VALIDATION_FAILED = 8,
  MC_STATUS_BAD_REQUEST = 9,
  MC_STATUS_CONFIG = 10,
  MC_STATUS_INTERNAL = 11,
} McStatus;

/**
 * Opaque handle to an open commons.
 */
typedef struct McCommons McCommons;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Open the commons described by a YAML config file.
 *
 * # Safety
 * `config_path` must be a valid C string; `out` must be writable.
 */
enum McStatus mc_commons_open(const char *config_path, struct McCommons **out);

/**
 * # Safety
 * `h` must come from [`mc_commons_open`] and not be used afterwards.
 */
void mc_commons_free(struct McCommons *h);

/**
 * Write `{"status":"ok","model_checksum":…}` to `out`.
 *
 * # Safety
 * Pointers must be valid as documented on the module.
 */
enum McStatus mc_status(const struct McCommons *h, char **out);

/**
 * Submit a JSON array of records to `project` ("program/project").
 * The submission result is written to `out` both on success and when
 * validation rejects the batch (status `ValidationFailed`).
 *
 * # Safety
 * Pointers must be valid as documented on the module; `token` may be null.
 */
enum McStatus mc_submit(const struct McCommons *h,
                        const char *token,
                        const char *project,
                        const char *records_json,
                        char **out);

/**
 * Run a graph query; the result document (data and errors) goes to `out`.
 *
 * # Safety
 * Pointers must be valid as documented on the module; `token` may be null.
 */
enum McStatus mc_graphql(const struct McCommons *h,
                         const char *token,
                         const char *query,
                         char **out);

/**
 * Register `{file_name, size, hashes:{md5}, urls}`; the new index record
 * goes to `out`.
 *
 * # Safety
 * Pointers must be valid as documented on the module; `token` may be null.
 */
enum McStatus mc_register_object(const struct McCommons *h,
                                 const char *token,
                                 const char *object_json,
                                 char **out);

/**
 * Resolve a GUID to its DRS object document.
 *
 * # Safety
 * Pointers must be valid as documented on the module; `token` may be null.
 */
enum McStatus mc_drs_object(const struct McCommons *h,
                            const char *token,
                            const char *guid,
                            char **out);

/**
 * Check one record against the model without storing it. The validation
 * report goes to `out`; status is `ValidationFailed` when it lists errors.
 *
 * # Safety
 * Pointers must be valid as documented on the module.
 */
enum McStatus mc_validate_record(const struct McCommons *h,
                                 const char *node_id,
                                 const char *record_json,
                                 char **out);

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next call on the same thread; do not free it.
 */
const char *mc_last_error(void);

/**
 * # Safety
 * `s` must be null or a string produced by this library.
 */
void mc_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MINICOMMONS_H */
