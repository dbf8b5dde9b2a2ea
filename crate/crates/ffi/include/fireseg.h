#ifndef FIRESEG_H
#define FIRESEG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FsStatus {
  FS_STATUS_OK = 0,
  FS_STATUS_NULL_POINTER = 1,
  FS_STATUS_INVALID_ARGUMENT = 2,
  FS_STATUS_IO = 3,
  FS_STATUS_CHECKPOINT = 4,
  FS_STATUS_SHAPE = 5,
  FS_STATUS_PANIC = 6,
  FS_STATUS_INTERNAL = 7,
} FsStatus;

/**
 * Opaque model handle.
 */
typedef struct FsModel FsModel;

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *fs_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *fs_version(void);

/**
 * Loads a checkpoint and stores a new handle in `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum FsStatus fs_model_load(const char *path, struct FsModel **out);

/**
 * Releases a handle from [`fs_model_load`]. Null is ignored.
 *
 * # Safety
 * `model` must be null or a live handle, not used afterwards.
 */
void fs_model_free(struct FsModel *model);

/**
 * Side length of the square images the model accepts, or 0 for null.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t fs_model_input_size(const struct FsModel *model);

/**
 * Current value of the gate coefficient, or NaN for null.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
double fs_model_alpha(const struct FsModel *model);

/**
 * Runs the model on an interleaved 8-bit RGB image of `height × width`
 * pixels. Writes `height * width` fire probabilities (row-major) to
 * `seg_prob` and the image-level probability to `*class_prob` (NaN if the
 * model has no classification branch). `class_prob` may be null.
 *
 * # Safety
 * `rgb` must hold `height * width * 3` bytes and `seg_prob` room for
 * `height * width` doubles.
 */
enum FsStatus fs_model_forward(const struct FsModel *model,
                               const uint8_t *rgb,
                               size_t height,
                               size_t width,
                               double *seg_prob,
                               double *class_prob);

/**
 * `out[i] = (1 + alpha * s) * a[i]` for `i < len`. `out` may alias `a`.
 *
 * # Safety
 * `a` and `out` must each hold `len` doubles.
 */
enum FsStatus fs_gated_attention(const double *a, size_t len, double s, double alpha, double *out);

/**
 * Fire and background IoU of two binary `height × width` masks (nonzero is
 * fire). An empty union counts as 1.
 *
 * # Safety
 * `pred` and `gt` must each hold `height * width` bytes; the outputs must be writable.
 */
enum FsStatus fs_iou(const uint8_t *pred,
                     const uint8_t *gt,
                     size_t height,
                     size_t width,
                     double *iou_fire,
                     double *iou_background);

/**
 * Writes 1 to `*out` when the mask's inferred label (any nonzero pixel
 * means fire) equals `label`, else 0.
 *
 * # Safety
 * `mask` must hold `len` bytes and `out` be writable.
 */
enum FsStatus fs_consistency(const uint8_t *mask, size_t len, uint8_t label, uint8_t *out);

#endif  /* FIRESEG_H */
