#ifndef EGO_PNR_H
#define EGO_PNR_H

/* Generated by cbindgen from crates/ffi. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EgoStatus {
  EGO_STATUS_OK = 0,
  EGO_STATUS_NULL_POINTER = 1,
  EGO_STATUS_INVALID_ARGUMENT = 2,
  EGO_STATUS_IO = 3,
  EGO_STATUS_PARSE = 4,
  EGO_STATUS_FORMAT = 5,
  EGO_STATUS_SAMPLING = 6,
  EGO_STATUS_SHAPE = 7,
  EGO_STATUS_NUMERIC = 8,
  EGO_STATUS_PANIC = 9,
} EgoStatus;

typedef enum EgoSampler {
  EGO_SAMPLER_EVEN = 0,
  EGO_SAMPLER_STRATIFIED = 1,
  EGO_SAMPLER_RANDOM = 2,
} EgoSampler;

// Per-clip feature tensors.
typedef struct EgoFeatures EgoFeatures;

// Parsed dataset manifest.
typedef struct EgoManifest EgoManifest;

// Model parameters loaded from a checkpoint.
typedef struct EgoModel EgoModel;

typedef struct EgoShiftStats {
  double mean_s;
  double std_s;
  double max_s;
  uint64_t trials;
} EgoShiftStats;

typedef struct EgoPrediction {
  double oscc_prob_change;
  // False when the temporal head picks the "no state change" class.
  bool has_pnr;
  // Seconds from clip start; 0 when `has_pnr` is false.
  double pnr_time_s;
} EgoPrediction;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or an empty string. The
// pointer stays valid until the next failing call on the same thread.
const char *ego_last_error(void);

// Library version as a static NUL-terminated string.
const char *ego_version(void);

// Half-gap shift `((s_min + s_max) / 2) / (n · fps · 2)` in seconds.
//
// # Safety
// `out` must be null or valid for writes.
enum EgoStatus ego_half_gap_expected_shift(size_t n,
                                           double fps,
                                           double s_min,
                                           double s_max,
                                           double *out);

// Monte-Carlo estimate of the sampled-frame distance to the PNR.
// `fixed_length == 0` uses the 5-8 s trim law, otherwise every window has
// exactly `fixed_length` frames.
//
// # Safety
// `out` must be null or valid for writes.
enum EgoStatus ego_monte_carlo_shift(enum EgoSampler sampler,
                                     size_t n,
                                     uint32_t fps,
                                     uint64_t trials,
                                     uint64_t seed,
                                     uint32_t fixed_length,
                                     struct EgoShiftStats *out);

// Writes `n` sorted frame indices from the window `[start, start + length)`.
//
// # Safety
// `out` must be null or valid for `n` writes.
enum EgoStatus ego_sample_frames(uint32_t start_frame,
                                 uint32_t length_frames,
                                 size_t n,
                                 enum EgoSampler sampler,
                                 uint64_t seed,
                                 uint32_t *out);

// Slot whose frame is closest to `pnr_frame`; ties go to the earlier slot.
//
// # Safety
// `frame_indices` must be valid for `len` reads, `out` valid for writes.
enum EgoStatus ego_assign_pseudo_pnr(const uint32_t *frame_indices,
                                     size_t len,
                                     uint32_t pnr_frame,
                                     size_t *out);

// `base_lr · batch_size / 256`.
double ego_scaled_base_lr(double base_lr, size_t batch_size);

// Parses a manifest from a JSON string.
//
// # Safety
// `json` must be a NUL-terminated string; `out` valid for writes.
enum EgoStatus ego_manifest_parse(const char *json, struct EgoManifest **out);

// Reads a manifest file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` valid for writes.
enum EgoStatus ego_manifest_read(const char *path, struct EgoManifest **out);

// # Safety
// `manifest` must come from this library; `out` valid for writes.
enum EgoStatus ego_manifest_clip_count(const struct EgoManifest *manifest, size_t *out);

// Fraction of clips with a state change.
//
// # Safety
// `manifest` must come from this library; `out` valid for writes.
enum EgoStatus ego_manifest_positive_fraction(const struct EgoManifest *manifest, double *out);

// # Safety
// `manifest` must be null or come from this library and not be freed twice.
void ego_manifest_free(struct EgoManifest *manifest);

// Reads a binary feature file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` valid for writes.
enum EgoStatus ego_features_read(const char *path, struct EgoFeatures **out);

// Writes clip count, views, frames per view and feature dimension.
//
// # Safety
// `features` must come from this library; outputs valid for writes.
enum EgoStatus ego_features_shape(const struct EgoFeatures *features,
                                  size_t *clips,
                                  size_t *views,
                                  size_t *frames,
                                  size_t *dim);

// # Safety
// `features` must be null or come from this library and not be freed twice.
void ego_features_free(struct EgoFeatures *features);

// Loads a model checkpoint.
//
// # Safety
// `path` must be a NUL-terminated string; `out` valid for writes.
enum EgoStatus ego_model_load(const char *path, struct EgoModel **out);

// Writes the number of input frames and the per-frame feature dimension.
//
// # Safety
// `model` must come from this library; outputs valid for writes.
enum EgoStatus ego_model_input_shape(const struct EgoModel *model,
                                     size_t *n_frames,
                                     size_t *feature_dim);

// Predicts from pre-gathered inputs: `views` tensors of
// `n_frames × feature_dim` floats laid out contiguously, sampled at
// `frame_indices` (length `n_frames`) of a clip recorded at `fps`.
//
// # Safety
// `features` must be valid for `views · n_frames · feature_dim` reads,
// `frame_indices` for `n_frames` reads and `out` for writes.
enum EgoStatus ego_model_predict(const struct EgoModel *model,
                                 const float *features,
                                 size_t views,
                                 const uint32_t *frame_indices,
                                 double fps,
                                 struct EgoPrediction *out);

// Predicts clip `clip_index` of `manifest` from `features`, averaging the
// first `views` views on the whole-clip evaluation grid.
//
// # Safety
// Handles must come from this library; `out` valid for writes.
enum EgoStatus ego_model_predict_clip(const struct EgoModel *model,
                                      const struct EgoManifest *manifest,
                                      const struct EgoFeatures *features,
                                      size_t clip_index,
                                      size_t views,
                                      struct EgoPrediction *out);

// # Safety
// `model` must be null or come from this library and not be freed twice.
void ego_model_free(struct EgoModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EGO_PNR_H */
