#ifndef PREFIXGUARD_H
#define PREFIXGUARD_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum {
  PG_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  PG_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  PG_STATUS_INVALID_UTF8 = 2,
  /**
   * File could not be read or parsed.
   */
  PG_STATUS_IO = 3,
  /**
   * Backend transport or contract failure.
   */
  PG_STATUS_BACKEND = 4,
  /**
   * Input violated an invariant (empty prompt, bad label, ...).
   */
  PG_STATUS_INVALID_INPUT = 5,
  /**
   * Unexpected internal failure.
   */
  PG_STATUS_INTERNAL = 6,
} PgStatus;

/**
 * Opaque prefix-set handle.
 */
typedef struct PgPrefixSet PgPrefixSet;

/**
 * Opaque provider handle.
 */
typedef struct PgProvider PgProvider;

/**
 * Score triple for one prompt, in nats.
 */
typedef struct {
  double ell_ref;
  double ell_agr;
  double s;
} PgScore;

/**
 * A thresholded decision.
 */
typedef struct {
  PgScore score;
  double tau;
  bool harmful;
} PgDecision;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Load a toy-model file as a provider.
 *
 * # Safety
 * `path` and `model_id` must be valid NUL-terminated strings; `out` must
 * point to writable storage for one pointer.
 */
PgStatus pg_toy_provider_load(const char *path, const char *model_id, PgProvider **out);

/**
 * Create a provider for a remote endpoint speaking the prefixguard wire
 * contract. `timeout_ms == 0` means the 30 s default; `chat_template`
 * selects the chat template mode. `auth_token` may be null.
 *
 * # Safety
 * String arguments must be valid NUL-terminated strings (or null where
 * documented); `out` must point to writable storage for one pointer.
 */
PgStatus pg_remote_provider_new(const char *endpoint,
                                const char *model_id,
                                bool chat_template,
                                uint64_t timeout_ms,
                                const char *auth_token,
                                PgProvider **out);

/**
 * # Safety
 * `provider` must be a pointer returned by a `pg_*_provider_*` constructor,
 * not yet freed; null is a no-op.
 */
void pg_provider_free(PgProvider *provider);

/**
 * Load a prefix-set file (schema prefix_set_v1).
 *
 * # Safety
 * `path` must be a valid NUL-terminated string; `out` must point to
 * writable storage for one pointer.
 */
PgStatus pg_prefix_set_load(const char *path, PgPrefixSet **out);

/**
 * Build the built-in manual prefix set, tokenized by `provider`.
 *
 * # Safety
 * `provider` must be a live provider handle; `out` must point to writable
 * storage for one pointer.
 */
PgStatus pg_prefix_set_manual(const PgProvider *provider, PgPrefixSet **out);

/**
 * # Safety
 * `set` must be a pointer returned by a `pg_prefix_set_*` constructor, not
 * yet freed; null is a no-op.
 */
void pg_prefix_set_free(PgPrefixSet *set);

/**
 * Score one prompt: the refusal-vs-agreement log-probability gap.
 *
 * # Safety
 * `provider` and `set` must be live handles, `prompt_text` a valid
 * NUL-terminated string, `out_score` writable storage for one [`PgScore`].
 */
PgStatus pg_score(const PgProvider *provider,
                  const PgPrefixSet *set,
                  const char *prompt_text,
                  PgScore *out_score);

/**
 * Score and threshold one prompt: harmful iff s > tau.
 *
 * # Safety
 * Same as [`pg_score`], with `out_decision` writable storage for one
 * [`PgDecision`].
 */
PgStatus pg_classify(const PgProvider *provider,
                     const PgPrefixSet *set,
                     const char *prompt_text,
                     double tau,
                     PgDecision *out_decision);

/**
 * Copy the calling thread's last error message into `buf` (truncated to
 * `len - 1` bytes, always NUL-terminated when `len > 0`). Returns the full
 * message length in bytes, excluding the NUL.
 *
 * # Safety
 * `buf` must point to at least `len` writable bytes, or be null (then only
 * the required length is returned).
 */
uintptr_t pg_last_error_message(char *buf, uintptr_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pg_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PREFIXGUARD_H */
