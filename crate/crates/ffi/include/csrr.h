#ifndef CSRR_H
#define CSRR_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define CSRR_STRATEGY_GREEDY 0

#define CSRR_STRATEGY_SAMPLE 1

#define CSRR_LATENT_MEAN 0

#define CSRR_LATENT_SAMPLE 1

typedef enum CsrrStatus {
  CSRR_STATUS_OK = 0,
  CSRR_STATUS_NULL_POINTER = 1,
  CSRR_STATUS_INVALID_UTF8 = 2,
  CSRR_STATUS_IO = 3,
  CSRR_STATUS_PARSE = 4,
  CSRR_STATUS_INVALID_ARGUMENT = 5,
  CSRR_STATUS_CHECKPOINT = 6,
  CSRR_STATUS_INTERNAL = 7,
  CSRR_STATUS_PANIC = 8,
} CsrrStatus;

/*
 Opaque model handle.
 */
typedef struct CsrrModel CsrrModel;

typedef struct CsrrGenerateOptions {
  /*
   `CSRR_STRATEGY_GREEDY` or `CSRR_STRATEGY_SAMPLE`.
   */
  uint32_t strategy;
  /*
   `CSRR_LATENT_MEAN` or `CSRR_LATENT_SAMPLE`.
   */
  uint32_t latent_mode;
  double temperature;
  uint64_t seed;
  /*
   0 means the model's utterance length.
   */
  size_t max_tokens;
} CsrrGenerateOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or null. Valid until the
 next library call on this thread.
 */
const char *csrr_last_error_message(void);

/*
 Static, NUL-terminated library version.
 */
const char *csrr_version(void);

struct CsrrGenerateOptions csrr_generate_options_default(void);

/*
 Loads a checkpoint. `vocab_path` may be null, in which case `vocab.txt`
 next to the checkpoint is used.

 # Safety
 String arguments must be null or NUL-terminated; `out` must be writable.
 */
enum CsrrStatus csrr_model_load(const char *checkpoint_path,
                                const char *vocab_path,
                                struct CsrrModel **out);

/*
 # Safety
 `model` must be null or a handle from [`csrr_model_load`] not yet freed.
 */
void csrr_model_free(struct CsrrModel *model);

/*
 Vocabulary size, or 0 for a null handle.

 # Safety
 `model` must be null or a live handle.
 */
size_t csrr_model_vocab_size(const struct CsrrModel *model);

/*
 Generates the next utterance after `history[0..history_len]` (oldest
 first). `options` may be null for the defaults. On success `*out_text`
 holds a string to release with [`csrr_string_free`].

 # Safety
 `history` must point to `history_len` NUL-terminated strings.
 */
enum CsrrStatus csrr_generate(const struct CsrrModel *model,
                              const char *const *history,
                              size_t history_len,
                              const struct CsrrGenerateOptions *options,
                              char **out_text);

/*
 # Safety
 `s` must be null or a string returned by this library, not yet freed.
 */
void csrr_string_free(char *s);

/*
 Closed-form `KL(q || p)` between diagonal Gaussians of dimension `dim`.

 # Safety
 The four arrays must hold `dim` doubles; `out` must be writable.
 */
enum CsrrStatus csrr_gaussian_kl(const double *mu_q,
                                 const double *sigma_q,
                                 const double *mu_p,
                                 const double *sigma_p,
                                 size_t dim,
                                 double *out);

/*
 Distinct-`n` over whitespace-tokenized `lines`.

 # Safety
 `lines` must point to `count` NUL-terminated strings; `out` must be
 writable.
 */
enum CsrrStatus csrr_distinct_n(const char *const *lines, size_t count, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CSRR_H */
