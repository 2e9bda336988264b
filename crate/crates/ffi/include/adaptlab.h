#ifndef ADAPTLAB_H
#define ADAPTLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  ADAPTLAB_STATUS_OK = 0,
  ADAPTLAB_STATUS_NULL_POINTER = 1,
  ADAPTLAB_STATUS_INVALID_UTF8 = 2,
  ADAPTLAB_STATUS_CONFIG = 3,
  ADAPTLAB_STATUS_DATA = 4,
  ADAPTLAB_STATUS_NUMERICAL = 5,
  ADAPTLAB_STATUS_IO = 6,
  ADAPTLAB_STATUS_BUFFER_TOO_SMALL = 7,
  ADAPTLAB_STATUS_PANIC = 8,
} AdaptlabStatus;

/**
 * Model checkpoint handle (single precision).
 */
typedef struct AdaptlabModel AdaptlabModel;

/**
 * Token vocabulary handle.
 */
typedef struct AdaptlabVocab AdaptlabVocab;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *adaptlab_version(void);

/**
 * Message of the last failed call on this thread, or an empty string.
 * The pointer stays valid until the next call on this thread.
 */
const char *adaptlab_last_error(void);

/**
 * Loads a vocabulary JSON file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
AdaptlabStatus adaptlab_vocab_load(const char *path, AdaptlabVocab **out);

/**
 * Parses a vocabulary from a JSON document in memory.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a writable pointer.
 */
AdaptlabStatus adaptlab_vocab_from_json(const char *json, AdaptlabVocab **out);

/**
 * # Safety
 * `vocab` must come from a vocabulary constructor and `out_len` be writable.
 */
AdaptlabStatus adaptlab_vocab_size(const AdaptlabVocab *vocab, size_t *out_len);

/**
 * # Safety
 * `vocab` must be null or a handle not yet freed.
 */
void adaptlab_vocab_free(AdaptlabVocab *vocab);

/**
 * Token ids of one line. `out_len` always receives the required length;
 * if it exceeds `capacity` nothing is written to `ids` and the call
 * returns `BufferTooSmall`.
 *
 * # Safety
 * `ids` must have room for `capacity` values (it may be null when
 * `capacity` is 0).
 */
AdaptlabStatus adaptlab_tokenize(const AdaptlabVocab *vocab,
                                 const char *line,
                                 uint32_t *ids,
                                 size_t capacity,
                                 size_t *out_len);

/**
 * Loads a single-precision checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
AdaptlabStatus adaptlab_model_load(const char *path, AdaptlabModel **out);

/**
 * # Safety
 * `model` must come from [`adaptlab_model_load`] and `out` be writable.
 */
AdaptlabStatus adaptlab_model_parameter_count(const AdaptlabModel *model, size_t *out);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void adaptlab_model_free(AdaptlabModel *model);

/**
 * Beam-decodes one source line. The result is written to `*out_text` and
 * must be released with [`adaptlab_string_free`].
 *
 * # Safety
 * Handles must be live, `source` NUL-terminated and `out_text` writable.
 */
AdaptlabStatus adaptlab_translate(const AdaptlabModel *model,
                                  const AdaptlabVocab *vocab,
                                  const char *source,
                                  size_t beam_size,
                                  char **out_text);

/**
 * # Safety
 * `s` must be null or a string returned by this library, not yet freed.
 */
void adaptlab_string_free(char *s);

/**
 * Corpus BLEU (0 to 100) of `n` hypotheses against `n` references.
 *
 * # Safety
 * `hyps` and `refs` must each point to `n` NUL-terminated strings.
 */
AdaptlabStatus adaptlab_corpus_bleu(const char *const *hyps,
                                    const char *const *refs,
                                    size_t n,
                                    double *out_score);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ADAPTLAB_H */
