#ifndef SOCIALTV_H
#define SOCIALTV_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SocialtvStatus {
  SOCIALTV_STATUS_OK = 0,
  SOCIALTV_STATUS_NULL_ARGUMENT = 1,
  SOCIALTV_STATUS_INVALID_UTF8 = 2,
  SOCIALTV_STATUS_INVALID_ARGUMENT = 3,
  SOCIALTV_STATUS_NOT_FOUND = 4,
  SOCIALTV_STATUS_IO = 5,
  SOCIALTV_STATUS_CORRUPT = 6,
  SOCIALTV_STATUS_CLOSED = 7,
  SOCIALTV_STATUS_PARSE = 8,
  SOCIALTV_STATUS_CONFLICT = 9,
  SOCIALTV_STATUS_PANIC = 10,
} SocialtvStatus;

// Opaque store handle.
typedef struct SocialtvStore SocialtvStore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the
// next call into this library on the same thread.
const char *socialtv_last_error(void);

// Release a string returned by this library. Null is ignored.
//
// # Safety
// `s` is null or a string returned by this library, not yet freed.
void socialtv_string_free(char *s);

// Open a store file, creating it if absent. A null `path` opens an empty
// in-memory store.
//
// # Safety
// `path` is null or a NUL-terminated string; `out` is writable.
enum SocialtvStatus socialtv_store_open(const char *path, struct SocialtvStore **out);

// Flush and free the handle. Null is ignored.
//
// # Safety
// `h` is null or a handle from `socialtv_store_open`, not yet closed.
enum SocialtvStatus socialtv_store_close(struct SocialtvStore *h);

// Import newline-separated records as one commit.
//
// # Safety
// `h` is a live handle; `records` is NUL-terminated; `out_count` is null or
// writable.
enum SocialtvStatus socialtv_store_import(const struct SocialtvStore *h,
                                          const char *records,
                                          uintptr_t *out_count);

// Every entity as newline-separated records.
//
// # Safety
// `h` is a live handle; `out` is writable.
enum SocialtvStatus socialtv_store_export(const struct SocialtvStore *h, char **out);

// Run the integrity scan; `out_issue_count` receives the number of
// violations and `out_report` (if not null) a JSON array describing them.
//
// # Safety
// `h` is a live handle; `out_issue_count` is writable; `out_report` is null
// or writable.
enum SocialtvStatus socialtv_store_validate(const struct SocialtvStore *h,
                                            uintptr_t *out_issue_count,
                                            char **out_report);

// Spread `type_code` from `seed_user` over friendships with the built-in
// rules. `out_json` receives the run report.
//
// # Safety
// `h` is a live handle; `seed_user` is NUL-terminated; `out_json` is writable.
enum SocialtvStatus socialtv_simulate(const struct SocialtvStore *h,
                                      const char *seed_user,
                                      int32_t type_code,
                                      uint32_t max_hops,
                                      char **out_json);

// Label of a recommendation type code in [1, 27].
//
// # Safety
// `out` is writable.
enum SocialtvStatus socialtv_type_label(int32_t code, char **out);

// Codes produced by the built-in rules for a profile, ascending. `out_codes`
// must have room for 27 entries; `out_len` receives the count.
//
// # Safety
// `prefs` points to `n_prefs` values (or is null when `n_prefs` is 0);
// `out_codes` has room for 27 bytes; `out_len` is writable.
enum SocialtvStatus socialtv_match_rules(int32_t gender_code,
                                         int32_t age,
                                         const uint32_t *prefs,
                                         uintptr_t n_prefs,
                                         uint8_t *out_codes,
                                         uintptr_t *out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SOCIALTV_H */
