#ifndef MVASSOC_H
#define MVASSOC_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MvaStatus {
  MVA_STATUS_OK = 0,
  MVA_STATUS_NULL_POINTER = 1,
  MVA_STATUS_INVALID_UTF8 = 2,
  MVA_STATUS_IO = 3,
  MVA_STATUS_SCHEMA = 4,
  MVA_STATUS_INVALID_SCENE = 5,
  MVA_STATUS_EMBEDDING = 6,
  MVA_STATUS_GEOMETRY = 7,
  MVA_STATUS_INVALID_ARGUMENT = 8,
  MVA_STATUS_OUT_OF_RANGE = 9,
  MVA_STATUS_INTERNAL = 10,
} MvaStatus;

typedef enum MvaScorerMode {
  MVA_SCORER_MODE_APPEARANCE = 0,
  MVA_SCORER_MODE_ASNET_FUSION = 1,
  MVA_SCORER_MODE_VBOW = 2,
  MVA_SCORER_MODE_HOMOGRAPHY = 3,
} MvaScorerMode;

typedef struct MvaAssociation MvaAssociation;

typedef struct MvaEmbeddings MvaEmbeddings;

typedef struct MvaScene MvaScene;

typedef struct MvaScorerConfig {
  enum MvaScorerMode mode;
  bool use_epipolar;
  double epipolar_weight;
  double threshold;
  /**
   * Use the raw cosine as the fusion weight instead of clamping to [0, 1].
   */
  bool raw_lambda;
} MvaScorerConfig;

typedef struct MvaMatch {
  size_t row;
  size_t col;
  double distance;
} MvaMatch;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until the
 * next call on the same thread.
 */
const char *mva_last_error_message(void);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MvaStatus mva_scene_load(const char *path, struct MvaScene **out);

/**
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MvaStatus mva_scene_from_json(const char *json, struct MvaScene **out);

/**
 * # Safety
 * `scene` must come from this library and not be freed yet; null is ignored.
 */
void mva_scene_free(struct MvaScene *scene);

/**
 * # Safety
 * `scene` must be a live handle and `out` a valid pointer.
 */
enum MvaStatus mva_scene_view_count(const struct MvaScene *scene, size_t *out);

/**
 * # Safety
 * `scene` must be a live handle and `out` a valid pointer.
 */
enum MvaStatus mva_scene_instance_count(const struct MvaScene *scene, size_t *out);

/**
 * Loads a sidecar and checks every key against `scene`.
 *
 * # Safety
 * `path` must be a NUL-terminated string, `scene` a live handle and `out` a
 * valid pointer.
 */
enum MvaStatus mva_embeddings_load(const char *path,
                                   const struct MvaScene *scene,
                                   struct MvaEmbeddings **out);

/**
 * Decodes sidecar bytes already in memory.
 *
 * # Safety
 * `bytes` must point to `len` readable bytes and `out` be a valid pointer.
 */
enum MvaStatus mva_embeddings_decode(const uint8_t *bytes, size_t len, struct MvaEmbeddings **out);

/**
 * # Safety
 * `embeddings` must come from this library and not be freed yet; null is ignored.
 */
void mva_embeddings_free(struct MvaEmbeddings *embeddings);

/**
 * # Safety
 * `embeddings` must be a live handle; `count` and `dim` valid pointers.
 */
enum MvaStatus mva_embeddings_shape(const struct MvaEmbeddings *embeddings,
                                    size_t *count,
                                    size_t *dim);

/**
 * Generates a synthetic scene with oracle embeddings using default settings.
 *
 * # Safety
 * `scene` and `embeddings` must be valid pointers.
 */
enum MvaStatus mva_synth_generate(uint64_t seed,
                                  double noise_sigma,
                                  struct MvaScene **scene,
                                  struct MvaEmbeddings **embeddings);

struct MvaScorerConfig mva_scorer_config_default(void);

/**
 * Associates every view pair of `scene`. `embeddings` may be null only in
 * homography mode.
 *
 * # Safety
 * Handles must be live, `config` and `out` valid pointers.
 */
enum MvaStatus mva_associate(const struct MvaScene *scene,
                             const struct MvaEmbeddings *embeddings,
                             const struct MvaScorerConfig *config,
                             struct MvaAssociation **out);

/**
 * # Safety
 * `association` must come from this library and not be freed yet; null is ignored.
 */
void mva_association_free(struct MvaAssociation *association);

/**
 * # Safety
 * `association` must be a live handle and `out` a valid pointer.
 */
enum MvaStatus mva_association_pair_count(const struct MvaAssociation *association, size_t *out);

/**
 * Camera ids of pair `index`; pairs are ordered by `(low id, high id)`.
 *
 * # Safety
 * `association` must be a live handle; `camera_a` and `camera_b` valid pointers.
 */
enum MvaStatus mva_association_pair_cameras(const struct MvaAssociation *association,
                                            size_t index,
                                            uint32_t *camera_a,
                                            uint32_t *camera_b);

/**
 * # Safety
 * `association` must be a live handle and `out` a valid pointer.
 */
enum MvaStatus mva_association_match_count(const struct MvaAssociation *association,
                                           size_t index,
                                           size_t *out);

/**
 * Copies up to `capacity` matches of pair `index` into `buffer`; `written`
 * receives the number copied.
 *
 * # Safety
 * `buffer` must have room for `capacity` entries (it may be null when
 * `capacity` is 0); `written` must be a valid pointer.
 */
enum MvaStatus mva_association_matches(const struct MvaAssociation *association,
                                       size_t index,
                                       struct MvaMatch *buffer,
                                       size_t capacity,
                                       size_t *written);

/**
 * Association output JSON; release with [`mva_string_free`].
 *
 * # Safety
 * `association` must be a live handle and `out` a valid pointer.
 */
enum MvaStatus mva_association_to_json(const struct MvaAssociation *association, char **out);

/**
 * # Safety
 * `s` must come from this library and not be freed yet; null is ignored.
 */
void mva_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MVASSOC_H */
