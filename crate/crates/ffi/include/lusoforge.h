#ifndef LUSOFORGE_H
#define LUSOFORGE_H

/* Generated by cbindgen from crates/ffi. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LfStatus {
  LF_STATUS_OK = 0,
  LF_STATUS_NULL_POINTER = 1,
  LF_STATUS_INVALID_UTF8 = 2,
  LF_STATUS_INVALID_ARGUMENT = 3,
  LF_STATUS_IO = 4,
  LF_STATUS_FORMAT = 5,
  LF_STATUS_BUFFER_TOO_SMALL = 6,
  LF_STATUS_NOT_FOUND = 7,
  LF_STATUS_PANIC = 8,
} LfStatus;

/**
 * Loaded checkpoint: configuration plus named tensors.
 */
typedef struct LfCheckpoint LfCheckpoint;

/**
 * Trained subword vocabulary.
 */
typedef struct LfTokenizer LfTokenizer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until
 * the next call into this library from the same thread.
 */
const char *lf_last_error_message(void);

/**
 * Library version, a static NUL-terminated string.
 */
const char *lf_version(void);

enum LfStatus lf_pearson(const double *pred, const double *gold, size_t n, double *out);

enum LfStatus lf_accuracy(const uint32_t *pred, const uint32_t *gold, size_t n, double *out);

/**
 * F1 of class `positive`.
 */
enum LfStatus lf_f1_binary(const uint32_t *pred,
                           const uint32_t *gold,
                           size_t n,
                           uint32_t positive,
                           double *out);

/**
 * Linear warm-up then linear decay to zero.
 */
double lf_lr_at(uint64_t step, uint64_t warmup_steps, uint64_t total_steps, double peak_lr);

/**
 * Relative-position bucket of query `i` and key `j` with window `k`.
 */
size_t lf_relative_bucket(size_t i, size_t j, size_t k);

enum LfStatus lf_tokenizer_load(const char *path, struct LfTokenizer **out);

enum LfStatus lf_tokenizer_from_json(const char *json, struct LfTokenizer **out);

/**
 * Accepts null.
 */
void lf_tokenizer_free(struct LfTokenizer *tok);

/**
 * 0 for a null handle.
 */
size_t lf_tokenizer_vocab_size(const struct LfTokenizer *tok);

/**
 * Token ids of `text`, truncated to `max_len`, optionally wrapped in
 * `[CLS]` … `[SEP]`.
 */
enum LfStatus lf_tokenizer_encode(const struct LfTokenizer *tok,
                                  const char *text,
                                  size_t max_len,
                                  bool add_specials,
                                  uint32_t *ids,
                                  size_t cap,
                                  size_t *len);

/**
 * Text of `ids` (special tokens dropped) as a NUL-terminated string.
 */
enum LfStatus lf_tokenizer_decode(const struct LfTokenizer *tok,
                                  const uint32_t *ids,
                                  size_t n,
                                  char *buf,
                                  size_t cap,
                                  size_t *len);

enum LfStatus lf_checkpoint_load(const char *path, struct LfCheckpoint **out);

/**
 * Accepts null.
 */
void lf_checkpoint_free(struct LfCheckpoint *ckpt);

/**
 * Number of tensors; 0 for a null handle.
 */
size_t lf_checkpoint_tensor_count(const struct LfCheckpoint *ckpt);

/**
 * The encoder configuration as JSON.
 */
enum LfStatus lf_checkpoint_config_json(const struct LfCheckpoint *ckpt,
                                        char *buf,
                                        size_t cap,
                                        size_t *len);

/**
 * Name of the `index`-th tensor in name order.
 */
enum LfStatus lf_checkpoint_tensor_name(const struct LfCheckpoint *ckpt,
                                        size_t index,
                                        char *buf,
                                        size_t cap,
                                        size_t *len);

enum LfStatus lf_checkpoint_tensor_shape(const struct LfCheckpoint *ckpt,
                                         const char *name,
                                         size_t *dims,
                                         size_t cap,
                                         size_t *ndim);

/**
 * Row-major `f32` values of a tensor.
 */
enum LfStatus lf_checkpoint_tensor_data(const struct LfCheckpoint *ckpt,
                                        const char *name,
                                        float *data,
                                        size_t cap,
                                        size_t *len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LUSOFORGE_H */
