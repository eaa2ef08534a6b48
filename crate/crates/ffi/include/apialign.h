#ifndef APIALIGN_H
#define APIALIGN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Stage bits for [`ApialignAlignOptions::stages`].
#define APIALIGN_STAGE_SEED 1

#define APIALIGN_STAGE_ADVERSARIAL 2

#define APIALIGN_STAGE_REFINE 4

// Result code of every fallible call.
typedef enum ApialignStatus {
  APIALIGN_STATUS_OK = 0,
  APIALIGN_STATUS_NULL_ARGUMENT = 1,
  APIALIGN_STATUS_INVALID_UTF8 = 2,
  APIALIGN_STATUS_IO = 3,
  APIALIGN_STATUS_FORMAT = 4,
  APIALIGN_STATUS_DIMENSION_MISMATCH = 5,
  APIALIGN_STATUS_CONFIG = 6,
  APIALIGN_STATUS_INVALID_INPUT = 7,
  // Diverged or non-finite numbers during training.
  APIALIGN_STATUS_NUMERIC = 8,
  // The query token is not in the source vocabulary.
  APIALIGN_STATUS_OUT_OF_VOCABULARY = 9,
  APIALIGN_STATUS_INDEX_OUT_OF_RANGE = 10,
  APIALIGN_STATUS_PANIC = 11,
} ApialignStatus;

// Candidate combination used by refinement.
typedef enum ApialignCombine {
  APIALIGN_COMBINE_INTERSECTION = 0,
  APIALIGN_COMBINE_UNION = 1,
  APIALIGN_COMBINE_TOP_K = 2,
  APIALIGN_COMBINE_COSINE = 3,
} ApialignCombine;

typedef struct ApialignMapping ApialignMapping;

// Ranked neighbors of one query.
typedef struct ApialignResults ApialignResults;

typedef struct ApialignSeeds ApialignSeeds;

// Embedding space plus its normalized search index.
typedef struct ApialignSpace ApialignSpace;

// Alignment settings. Obtain defaults from
// [`apialign_align_options_default`] and override fields as needed.
typedef struct ApialignAlignOptions {
  // Bitwise OR of `APIALIGN_STAGE_*`.
  uint32_t stages;
  uint32_t adv_epochs;
  uint32_t adv_iterations;
  uint32_t batch_size;
  uint32_t disc_steps;
  double adv_learning_rate;
  double momentum;
  double lr_decay;
  double label_smoothing;
  double input_dropout;
  // Width of each hidden layer of the discriminator.
  uint32_t hidden_width;
  uint32_t hidden_layers;
  double orthogonalize;
  uint32_t max_rank;
  uint32_t selection_k;
  uint32_t refine_top_k;
  double refine_threshold;
  enum ApialignCombine combine;
  bool mutual_nn;
  uint32_t refine_iters;
  uint32_t patience;
  uint64_t rng_seed;
} ApialignAlignOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after a success.
// Valid until the next call on this thread.
const char *apialign_last_error(void);

// Static description of a status code.
const char *apialign_status_string(enum ApialignStatus status);

// Loads an embedding file (and its `.freq` sidecar when present).
//
// # Safety
// `path` must be a valid C string; `out` must be writable.
enum ApialignStatus apialign_space_load(const char *path, struct ApialignSpace **out);

// # Safety
// `space` must come from [`apialign_space_load`] or be NULL.
void apialign_space_free(struct ApialignSpace *space);

// Number of tokens; 0 for NULL.
//
// # Safety
// `space` must be a live handle or NULL.
uintptr_t apialign_space_len(const struct ApialignSpace *space);

// Vector dimension; 0 for NULL.
//
// # Safety
// `space` must be a live handle or NULL.
uintptr_t apialign_space_dim(const struct ApialignSpace *space);

// Token at frequency rank `index`, or NULL when out of range.
//
// # Safety
// `space` must be a live handle or NULL.
const char *apialign_space_token(const struct ApialignSpace *space, uintptr_t index);

// Loads a mapping matrix file.
//
// # Safety
// `path` must be a valid C string; `out` must be writable.
enum ApialignStatus apialign_mapping_load(const char *path, struct ApialignMapping **out);

// # Safety
// `mapping` must be a live handle; `path` a valid C string.
enum ApialignStatus apialign_mapping_save(const struct ApialignMapping *mapping, const char *path);

// # Safety
// `mapping` must come from this library or be NULL.
void apialign_mapping_free(struct ApialignMapping *mapping);

// # Safety
// `mapping` must be a live handle or NULL.
uintptr_t apialign_mapping_dim(const struct ApialignMapping *mapping);

// Pipeline stage that produced the mapping (`initial`, `seeded`,
// `adversarial` or `refined`), or NULL.
//
// # Safety
// `mapping` must be a live handle or NULL.
const char *apialign_mapping_stage(const struct ApialignMapping *mapping);

// Row-major copy of the `dim x dim` matrix into `buffer`, which must hold
// `len >= dim * dim` doubles.
//
// # Safety
// `mapping` must be a live handle; `buffer` must be writable for `len`
// doubles.
enum ApialignStatus apialign_mapping_copy(const struct ApialignMapping *mapping,
                                          double *buffer,
                                          uintptr_t len);

// Loads a seed dictionary TSV.
//
// # Safety
// `path` must be a valid C string; `out` must be writable.
enum ApialignStatus apialign_seeds_load(const char *path, struct ApialignSeeds **out);

// Mines seed pairs whose `Class.method` suffixes match uniquely.
//
// # Safety
// `src` and `tgt` must be live handles; `out` must be writable.
enum ApialignStatus apialign_seeds_mine(const struct ApialignSpace *src,
                                        const struct ApialignSpace *tgt,
                                        struct ApialignSeeds **out);

// # Safety
// `seeds` must be a live handle or NULL.
uintptr_t apialign_seeds_len(const struct ApialignSeeds *seeds);

// # Safety
// `seeds` must be a live handle; `path` a valid C string.
enum ApialignStatus apialign_seeds_save(const struct ApialignSeeds *seeds, const char *path);

// # Safety
// `seeds` must come from this library or be NULL.
void apialign_seeds_free(struct ApialignSeeds *seeds);

// Default settings: all three stages and the library defaults.
struct ApialignAlignOptions apialign_align_options_default(void);

// Learns a source-to-target mapping. `seeds` may be NULL when the seeding
// stage is not selected.
//
// # Safety
// `src` and `tgt` must be live handles, `seeds` a live handle or NULL,
// `options` readable and `out` writable.
enum ApialignStatus apialign_align(const struct ApialignSpace *src,
                                   const struct ApialignSpace *tgt,
                                   const struct ApialignSeeds *seeds,
                                   const struct ApialignAlignOptions *options,
                                   struct ApialignMapping **out);

// Maps `token` through `mapping` and retrieves its `k` nearest target
// tokens. Pass a negative `threshold` to keep all neighbors. An unknown
// token yields `APIALIGN_STATUS_OUT_OF_VOCABULARY`.
//
// # Safety
// Handles must be live, `token` a valid C string and `out` writable.
enum ApialignStatus apialign_query(const struct ApialignMapping *mapping,
                                   const struct ApialignSpace *src,
                                   const struct ApialignSpace *tgt,
                                   const char *token,
                                   uintptr_t k,
                                   double threshold,
                                   struct ApialignResults **out);

// # Safety
// `results` must be a live handle or NULL.
uintptr_t apialign_results_len(const struct ApialignResults *results);

// Target token at `rank` (0-based), or NULL when out of range.
//
// # Safety
// `results` must be a live handle or NULL.
const char *apialign_results_token(const struct ApialignResults *results, uintptr_t rank);

// Cosine similarity at `rank`, or NaN when out of range.
//
// # Safety
// `results` must be a live handle or NULL.
double apialign_results_similarity(const struct ApialignResults *results, uintptr_t rank);

// # Safety
// `results` must come from [`apialign_query`] or be NULL.
void apialign_results_free(struct ApialignResults *results);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* APIALIGN_H */
