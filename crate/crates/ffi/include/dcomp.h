#ifndef DCOMP_H
#define DCOMP_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DcompStatus {
  DCOMP_STATUS_OK = 0,
  DCOMP_STATUS_NULL_POINTER = 1,
  DCOMP_STATUS_INVALID_ARGUMENT = 2,
  DCOMP_STATUS_IO = 3,
  DCOMP_STATUS_DATA = 4,
  DCOMP_STATUS_NUMERICAL = 5,
  DCOMP_STATUS_PANIC = 6,
} DcompStatus;

// Loaded network; create with [`dcomp_model_load`], release with
// [`dcomp_model_free`].
typedef struct DcompModel DcompModel;

typedef struct DcompMetrics {
  double rmse_mm;
  double mae_mm;
  double abs_rel;
  double delta1;
  double delta2;
  double delta3;
  double irmse_per_km;
  double imae_per_km;
  uint64_t pixels;
} DcompMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the
// next call on the same thread.
const char *dcomp_last_error(void);

// Library version as a static string.
const char *dcomp_version(void);

// Loads a checkpoint file into `*out`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum DcompStatus dcomp_model_load(const char *path, struct DcompModel **out);

// Releases a model; null is ignored.
//
// # Safety
// `model` must come from [`dcomp_model_load`] and not be used afterwards.
void dcomp_model_free(struct DcompModel *model);

// Number of trainable scalars, 0 for a null model.
//
// # Safety
// `model` must be null or a live handle.
uint64_t dcomp_model_parameter_count(const struct DcompModel *model);

// Image sides must be multiples of this.
//
// # Safety
// `model` must be null or a live handle.
uint32_t dcomp_model_resolution_factor(const struct DcompModel *model);

// Dense metric depth for one frame.
//
// # Safety
// `rgb` must hold `3·width·height` floats, `sparse` and `out_depth`
// `width·height` floats each.
enum DcompStatus dcomp_complete(const struct DcompModel *model,
                                uint32_t width,
                                uint32_t height,
                                const float *rgb,
                                const float *sparse,
                                float *out_depth);

// Fills every pixel with the depth of its nearest valid sparse pixel.
//
// # Safety
// `sparse` and `out_depth` must hold `width·height` floats.
enum DcompStatus dcomp_nn_fill(uint32_t width,
                               uint32_t height,
                               const float *sparse,
                               float *out_depth);

// Scores `pred` against `gt` over pixels where `gt > 0`.
//
// # Safety
// `pred` and `gt` must hold `width·height` floats, `out` be writable.
enum DcompStatus dcomp_metrics(uint32_t width,
                               uint32_t height,
                               const float *pred,
                               const float *gt,
                               struct DcompMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DCOMP_H */
