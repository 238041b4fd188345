#ifndef SELFTUNE_H
#define SELFTUNE_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Result code of every fallible call.
 */
typedef enum st_status {
  ST_STATUS_OK = 0,
  ST_STATUS_NULL_POINTER = 1,
  ST_STATUS_INVALID_ARGUMENT = 2,
  ST_STATUS_SHAPE = 3,
  ST_STATUS_CONFIG = 4,
  ST_STATUS_FORMAT = 5,
  ST_STATUS_IO = 6,
  ST_STATUS_PANIC = 7,
} st_status;

/**
 * Opaque class-partitioned key store.
 */
typedef struct st_keystore st_keystore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len - 1` bytes). Returns the full message length, 0 when the
 * last call succeeded.
 *
 * # Safety
 * A non-null `buf` must point to `len` writable bytes.
 */
size_t st_last_error(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *st_version(void);

/**
 * Releases a string returned by this library. Null is a no-op.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void st_string_free(char *s);

/**
 * Creates a store of `num_categories` FIFO queues holding
 * `keys_per_category` keys of length `key_dim`, seeded with random unit keys.
 *
 * # Safety
 * `out` must be a valid pointer to write the handle to.
 */
enum st_status st_keystore_new(size_t num_categories,
                               size_t keys_per_category,
                               size_t key_dim,
                               uint64_t seed,
                               bool normalize_keys,
                               struct st_keystore **out);

/**
 * Reads a store written by [`st_keystore_save`] or the `train` command.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum st_status st_keystore_load(const char *path, struct st_keystore **out);

/**
 * # Safety
 * `store` must be a live handle and `path` a NUL-terminated string.
 */
enum st_status st_keystore_save(const struct st_keystore *store, const char *path);

/**
 * Releases a store. Null is a no-op.
 *
 * # Safety
 * `store` must come from this library and not have been freed.
 */
void st_keystore_free(struct st_keystore *store);

/**
 * Writes the category count, keys per category and key length.
 *
 * # Safety
 * `store` must be a live handle; each non-null output must be writable.
 */
enum st_status st_keystore_shape(const struct st_keystore *store,
                                 size_t *num_categories,
                                 size_t *keys_per_category,
                                 size_t *key_dim);

/**
 * Overwrites the oldest key of `category` with `key`.
 *
 * # Safety
 * `store` must be a live handle and `key` point to `key_len` values.
 */
enum st_status st_keystore_enqueue(struct st_keystore *store,
                                   size_t category,
                                   const double *key,
                                   size_t key_len);

/**
 * Copies the positive group of `category`, oldest first, into `out` as a
 * `keys_per_category x key_dim` matrix.
 *
 * # Safety
 * `store` must be a live handle and `out` point to `out_len` writable values.
 */
enum st_status st_keystore_positives(const struct st_keystore *store,
                                     size_t category,
                                     double *out,
                                     size_t out_len);

/**
 * Copies the keys of every other category into `out` as a
 * `keys_per_category * (num_categories - 1) x key_dim` matrix.
 *
 * # Safety
 * `store` must be a live handle and `out` point to `out_len` writable values.
 */
enum st_status st_keystore_negatives(const struct st_keystore *store,
                                     size_t category,
                                     double *out,
                                     size_t out_len);

/**
 * Group contrast of `query` against `num_positives` positive and
 * `num_negatives` negative keys of length `dim`. Writes the loss and, when
 * `grad_query` is non-null, its `dim` query gradient.
 *
 * # Safety
 * Buffers must hold the stated number of values; `loss` must be writable.
 */
enum st_status st_pgc(const double *query,
                      size_t dim,
                      const double *positives,
                      size_t num_positives,
                      const double *negatives,
                      size_t num_negatives,
                      double temperature,
                      double *loss,
                      double *grad_query);

/**
 * Contrast of `query` against one positive `key` and `num_negatives`
 * negatives, all of length `dim`.
 *
 * # Safety
 * Buffers must hold the stated number of values; `loss` must be writable.
 */
enum st_status st_info_nce(const double *query,
                           const double *key,
                           size_t dim,
                           const double *negatives,
                           size_t num_negatives,
                           double temperature,
                           double *loss,
                           double *grad_query);

/**
 * Cross-entropy of softmax(`logits`) at `label`, with the optional logit
 * gradient.
 *
 * # Safety
 * `logits` must hold `num_categories` values; `loss` must be writable.
 */
enum st_status st_cross_entropy(const double *logits,
                                size_t num_categories,
                                size_t label,
                                double *loss,
                                double *grad_logits);

/**
 * Trains one run from an experiment config in JSON, using `train.seed` for
 * data and model. Writes the per-epoch report as CSV text (release with
 * [`st_string_free`]) and, when non-null, the final test accuracy.
 *
 * # Safety
 * `config_json` must be a NUL-terminated string and `report_csv` writable.
 */
enum st_status st_train(const char *config_json, char **report_csv, double *final_accuracy);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SELFTUNE_H */
