#ifndef SYSARG_H
#define SYSARG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

// Result code of every fallible call.
typedef enum SysargStatus {
  SYSARG_STATUS_OK = 0,
  SYSARG_STATUS_NULL_POINTER = 1,
  SYSARG_STATUS_INVALID_UTF8 = 2,
  SYSARG_STATUS_PARSE = 3,
  // Invalid configuration or argument value.
  SYSARG_STATUS_CONFIG = 4,
  SYSARG_STATUS_IO = 5,
  SYSARG_STATUS_VOCAB_MISMATCH = 6,
  SYSARG_STATUS_BUFFER_TOO_SMALL = 7,
  SYSARG_STATUS_RUNTIME = 8,
  SYSARG_STATUS_PANIC = 9,
} SysargStatus;

// A trained model loaded from a checkpoint file.
typedef struct SysargModel SysargModel;

// A token vocabulary with reserved ids 0 (pad), 1 (unknown), 2 (mask).
typedef struct SysargVocab SysargVocab;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message of this thread into `buf` (truncated,
// always NUL-terminated) and returns the full message length, or 0 when
// there is none.
//
// # Safety
// `buf` must be null or valid for `cap` bytes.
size_t sysarg_last_error(char *buf, size_t cap);

// Library version as a static string.
const char *sysarg_version(void);

// Releases a string returned by this library.
//
// # Safety
// `s` must be null or a pointer previously returned by this library.
void sysarg_string_free(char *s);

// Sinusoidal encoding of `x` into `out[0..dim]`; `dim` must be even and
// positive.
//
// # Safety
// `out` must be valid for `dim` doubles.
enum SysargStatus sysarg_encode(double x, size_t dim, double *out);

// Parses one babeltrace text line into a canonical JSON object string.
// With `epoch_ns` 0 the line's own stamp is used as the epoch, giving a
// zero timestamp.
//
// # Safety
// `line` must be a valid C string and `out` a valid pointer.
enum SysargStatus sysarg_parse_line(const char *line, uint64_t epoch_ns, char **out);

// Generates `n_events` synthetic events with the default workload as
// canonical JSONL text.
//
// # Safety
// `out` must be a valid pointer.
enum SysargStatus sysarg_generate(uint64_t seed, size_t n_events, char **out);

// Builds a vocabulary from newline-separated tokens, keeping tokens seen
// at least `min_count` times.
//
// # Safety
// `tokens` must be a valid C string and `out` a valid pointer.
enum SysargStatus sysarg_vocab_build(const char *tokens,
                                     size_t min_count,
                                     struct SysargVocab **out);

// # Safety
// `v` must be null or a handle from [`sysarg_vocab_build`].
void sysarg_vocab_free(struct SysargVocab *v);

// Number of ids including the reserved ones; 0 for a null handle.
//
// # Safety
// `v` must be null or a live vocabulary handle.
size_t sysarg_vocab_len(const struct SysargVocab *v);

// Id of `token`, or the unknown id 1 for unseen tokens.
//
// # Safety
// `v` must be a live vocabulary handle, `token` a valid C string and `id`
// a valid pointer.
enum SysargStatus sysarg_vocab_lookup(const struct SysargVocab *v, const char *token, uint32_t *id);

// Hex SHA-256 fingerprint of the vocabulary.
//
// # Safety
// `v` must be a live vocabulary handle and `out` a valid pointer.
enum SysargStatus sysarg_vocab_hash(const struct SysargVocab *v, char **out);

// Loads a checkpoint written by `sysarg train`.
//
// # Safety
// `path` must be a valid C string and `out` a valid pointer.
enum SysargStatus sysarg_model_load(const char *path, struct SysargModel **out);

// # Safety
// `m` must be null or a handle from [`sysarg_model_load`].
void sysarg_model_free(struct SysargModel *m);

// Events per scored window; 0 for a null handle.
//
// # Safety
// `m` must be null or a live model handle.
size_t sysarg_model_window_len(const struct SysargModel *m);

// Scores a canonical JSONL trace: the events are windowed with the
// model's window length (a trailing partial window is dropped) and the
// log-likelihood of each window is written to `scores`. `*n_windows`
// receives the window count even when `cap` is too small, in which case
// nothing is written and `BufferTooSmall` is returned.
//
// # Safety
// `m` must be a live model handle, `jsonl` a valid C string, `scores`
// valid for `cap` doubles (or null with `cap` 0) and `n_windows` a valid
// pointer.
enum SysargStatus sysarg_model_score_jsonl(const struct SysargModel *m,
                                           const char *jsonl,
                                           double *scores,
                                           size_t cap,
                                           size_t *n_windows);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SYSARG_H */
