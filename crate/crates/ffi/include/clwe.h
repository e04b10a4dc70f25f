/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef CLWE_H
#define CLWE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ClweStatus {
  CLWE_STATUS_OK = 0,
  CLWE_STATUS_IO = 1,
  CLWE_STATUS_FORMAT = 2,
  CLWE_STATUS_CONTRACT = 3,
  CLWE_STATUS_NUMERICAL = 4,
  CLWE_STATUS_DEGENERATE = 5,
  CLWE_STATUS_ALIGNMENT_COLLAPSE = 6,
  CLWE_STATUS_CONFIG = 7,
  CLWE_STATUS_NULL_ARGUMENT = 8,
  CLWE_STATUS_INVALID_UTF8 = 9,
  CLWE_STATUS_PANIC = 10,
} ClweStatus;

typedef enum ClweRetrieval {
  CLWE_RETRIEVAL_NN = 0,
  CLWE_RETRIEVAL_CSLS = 1,
} ClweRetrieval;

/**
 * Word-index pairs between a source and a target space.
 */
typedef struct ClweDictionary ClweDictionary;

/**
 * Result of unsupervised alignment.
 */
typedef struct ClweMapping ClweMapping;

/**
 * A vocabulary with its embedding matrix.
 */
typedef struct ClweSpace ClweSpace;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *clwe_last_error(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *clwe_version(void);

/**
 * Loads a text embedding file. `max_vocab` of 0 reads every word.
 *
 * # Safety
 * `path` must be a nul-terminated string and `out` a valid pointer.
 */
enum ClweStatus clwe_space_load(const char *path, size_t max_vocab, struct ClweSpace **out);

/**
 * Builds a space from `rows` words and a row-major `rows × dim` array.
 *
 * # Safety
 * `words` must hold `rows` nul-terminated strings and `data` `rows * dim`
 * doubles.
 */
enum ClweStatus clwe_space_new(const char *const *words,
                               const double *data,
                               size_t rows,
                               size_t dim,
                               struct ClweSpace **out);

/**
 * # Safety
 * `space` must come from this library; `path` must be nul-terminated.
 */
enum ClweStatus clwe_space_save(const struct ClweSpace *space, const char *path);

/**
 * # Safety
 * `space` must be null or a live handle.
 */
size_t clwe_space_rows(const struct ClweSpace *space);

/**
 * # Safety
 * `space` must be null or a live handle.
 */
size_t clwe_space_dim(const struct ClweSpace *space);

/**
 * Row-major values, valid while the handle lives. Null for a null handle.
 *
 * # Safety
 * `space` must be null or a live handle.
 */
const double *clwe_space_data(const struct ClweSpace *space);

/**
 * Word at `index`, valid while the handle lives. Null when out of range.
 *
 * # Safety
 * `space` must be null or a live handle.
 */
const char *clwe_space_word(const struct ClweSpace *space, size_t index);

/**
 * Applies a comma-separated list of `unit` / `center` steps in place, e.g.
 * `"unit,center,unit"`. Null means that default sequence.
 *
 * # Safety
 * `space` must be a live handle; `steps` null or nul-terminated.
 */
enum ClweStatus clwe_space_preprocess(struct ClweSpace *space, const char *steps);

/**
 * # Safety
 * `space` must be null or a handle not yet freed.
 */
void clwe_space_free(struct ClweSpace *space);

/**
 * Reads a "source target" word-pair file against two spaces; pairs with
 * unknown words are dropped.
 *
 * # Safety
 * Handles must be live; `path` nul-terminated; `out` valid.
 */
enum ClweStatus clwe_dictionary_load(const char *path,
                                     const struct ClweSpace *src,
                                     const struct ClweSpace *trg,
                                     struct ClweDictionary **out);

/**
 * # Safety
 * Handles must be live; `path` nul-terminated.
 */
enum ClweStatus clwe_dictionary_save(const struct ClweDictionary *dict,
                                     const struct ClweSpace *src,
                                     const struct ClweSpace *trg,
                                     const char *path);

/**
 * # Safety
 * `dict` must be null or a live handle.
 */
size_t clwe_dictionary_len(const struct ClweDictionary *dict);

/**
 * # Safety
 * `dict` must be a live handle; `source` and `target` valid pointers.
 */
enum ClweStatus clwe_dictionary_pair(const struct ClweDictionary *dict,
                                     size_t index,
                                     size_t *source,
                                     size_t *target);

/**
 * # Safety
 * `dict` must be null or a handle not yet freed.
 */
void clwe_dictionary_free(struct ClweDictionary *dict);

/**
 * Unsupervised alignment of two preprocessed spaces. `config` is TOML with
 * an optional `[mapping]` table, or null.
 *
 * # Safety
 * Handles must be live; `config` null or nul-terminated; `out` valid.
 */
enum ClweStatus clwe_align(const struct ClweSpace *src,
                           const struct ClweSpace *trg,
                           const char *config,
                           struct ClweMapping **out);

/**
 * # Safety
 * `mapping` must be null or a live handle.
 */
bool clwe_mapping_converged(const struct ClweMapping *mapping);

/**
 * # Safety
 * `mapping` must be null or a live handle.
 */
size_t clwe_mapping_iterations(const struct ClweMapping *mapping);

/**
 * # Safety
 * `mapping` must be null or a live handle.
 */
double clwe_mapping_objective(const struct ClweMapping *mapping);

/**
 * Copy of the self-learned dictionary.
 *
 * # Safety
 * `mapping` must be a live handle; `out` valid.
 */
enum ClweStatus clwe_mapping_dictionary(const struct ClweMapping *mapping,
                                        struct ClweDictionary **out);

/**
 * Maps a space into the shared space: the source transform when `source`
 * is true, the target transform otherwise.
 *
 * # Safety
 * Handles must be live; `out` valid.
 */
enum ClweStatus clwe_mapping_apply(const struct ClweMapping *mapping,
                                   const struct ClweSpace *space,
                                   bool source,
                                   struct ClweSpace **out);

/**
 * # Safety
 * `mapping` must be null or a handle not yet freed.
 */
void clwe_mapping_free(struct ClweMapping *mapping);

/**
 * Midpoint averaging over `dict` followed by per-space normalization.
 * `config` is TOML with an optional `[refine]` table, or null.
 * `pairs_averaged` may be null.
 *
 * # Safety
 * Handles must be live; output pointers valid.
 */
enum ClweStatus clwe_refine(const struct ClweSpace *src,
                            const struct ClweSpace *trg,
                            const struct ClweDictionary *dict,
                            const char *config,
                            struct ClweSpace **out_src,
                            struct ClweSpace **out_trg,
                            size_t *pairs_averaged);

/**
 * P@k against a gold word-pair file, one value in [0, 1] per entry of `ks`
 * written to `precision`.
 *
 * # Safety
 * Handles must be live; `ks` and `precision` must hold `n_ks` elements.
 */
enum ClweStatus clwe_evaluate(const struct ClweSpace *src,
                              const struct ClweSpace *trg,
                              const char *gold_path,
                              const size_t *ks,
                              size_t n_ks,
                              enum ClweRetrieval method,
                              size_t csls_k,
                              double *precision);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CLWE_H */
