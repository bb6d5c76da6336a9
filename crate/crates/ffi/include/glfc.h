#ifndef GLFC_H
#define GLFC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes.
typedef enum GlfcStatus {
  GLFC_STATUS_OK = 0,
  // A required pointer was null or a string was not UTF-8.
  GLFC_STATUS_INVALID_ARGUMENT = 1,
  GLFC_STATUS_CONFIG = 2,
  // Dataset, file format, checkpoint or shape problem.
  GLFC_STATUS_DATA = 3,
  GLFC_STATUS_IO = 4,
  // Evaluation could not be computed (e.g. empty body mask).
  GLFC_STATUS_EVALUATION = 5,
  // Internal contract violation or caught panic.
  GLFC_STATUS_INTERNAL = 6,
} GlfcStatus;

// Opaque model handle.
typedef struct GlfcModel GlfcModel;

// Opaque volume handle.
typedef struct GlfcVolume GlfcVolume;

// Loss terms of one evaluation.
typedef struct GlfcMclValues {
  double total;
  double glob;
  double soft;
  double bone;
} GlfcMclValues;

// Scores for one region; `voxels == 0` means the region was empty and the
// other fields are NaN.
typedef struct GlfcRegionScore {
  // Fraction in `[0, 1]`.
  double ssim;
  // dB; `+inf` when prediction and reference agree exactly.
  double psnr;
  double mae_hu;
  size_t voxels;
} GlfcRegionScore;

// Full body, soft tissue, bone.
typedef struct GlfcMetrics {
  struct GlfcRegionScore full;
  struct GlfcRegionScore soft_tissue;
  struct GlfcRegionScore bone;
} GlfcMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the calling thread's last error message (NUL terminated,
// truncated to `len - 1` bytes) into `buf`. Returns the full message length
// in bytes, excluding the terminator.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t glfc_last_error(char *buf, size_t len);

// HU → normalized `[-1, 1]` (input clipped to `[-1024, 3000]`).
double glfc_hu_to_norm(double hu);

// Normalized → HU (input clipped to `[-1, 1]`).
double glfc_norm_to_hu(double v);

// Multiple contrast loss of two normalized buffers of `n` values.
//
// # Safety
// `pred` and `reference` must point to `n` readable doubles and `out` to a
// writable [`GlfcMclValues`].
enum GlfcStatus glfc_mcl_loss(const double *pred,
                              const double *reference,
                              size_t n,
                              struct GlfcMclValues *out);

// Creates a volume from `rank` (2 or 3) extents, fastest axis first, and
// their HU voxels.
//
// # Safety
// `dims` must point to `rank` values, `voxels` to their product of floats,
// `out` to a writable handle pointer.
enum GlfcStatus glfc_volume_new(const size_t *dims,
                                size_t rank,
                                const float *voxels,
                                struct GlfcVolume **out);

// Reads a GVOL file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable handle pointer.
enum GlfcStatus glfc_volume_read(const char *path, struct GlfcVolume **out);

// Writes a GVOL file atomically.
//
// # Safety
// `vol` must be a live handle and `path` a NUL-terminated string.
enum GlfcStatus glfc_volume_write(const struct GlfcVolume *vol, const char *path);

// Number of axes; 0 for a null handle.
//
// # Safety
// `vol` must be null or a live handle.
size_t glfc_volume_rank(const struct GlfcVolume *vol);

// Extent of axis `axis`; 0 when out of range or null.
//
// # Safety
// `vol` must be null or a live handle.
size_t glfc_volume_dim(const struct GlfcVolume *vol, size_t axis);

// Borrowed pointer to the voxels, valid until the handle is freed.
//
// # Safety
// `vol` must be null or a live handle.
const float *glfc_volume_data(const struct GlfcVolume *vol, size_t *len);

// # Safety
// `vol` must be null or a handle not yet freed.
void glfc_volume_free(struct GlfcVolume *vol);

// Loads a checkpoint and its `.arch` sidecar.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable handle pointer.
enum GlfcStatus glfc_model_load(const char *path, struct GlfcModel **out);

// Learnable scalar count; 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t glfc_model_param_count(const struct GlfcModel *model);

// CBCT (HU) → synthetic CT (HU), same dims as the input.
//
// # Safety
// `model` and `cbct` must be live handles and `out` a writable handle pointer.
enum GlfcStatus glfc_model_infer(const struct GlfcModel *model,
                                 const struct GlfcVolume *cbct,
                                 struct GlfcVolume **out);

// # Safety
// `model` must be null or a handle not yet freed.
void glfc_model_free(struct GlfcModel *model);

// Masked SSIM / PSNR / MAE of `pred` against `reference` (both HU).
//
// # Safety
// `pred` and `reference` must be live handles and `out` writable.
enum GlfcStatus glfc_evaluate(const struct GlfcVolume *pred,
                              const struct GlfcVolume *reference,
                              struct GlfcMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GLFC_H */
