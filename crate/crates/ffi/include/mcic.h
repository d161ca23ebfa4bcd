#ifndef MCIC_H
#define MCIC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every entry point.
 */
typedef enum {
  MCIC_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  MCIC_STATUS_NULL_POINTER = 1,
  /**
   * Arguments were malformed (bad sizes, class ids, non-UTF-8 paths).
   */
  MCIC_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Input data or files were invalid.
   */
  MCIC_STATUS_DATA_ERROR = 3,
  /**
   * A computation produced non-finite values.
   */
  MCIC_STATUS_NUMERICAL_ERROR = 4,
  /**
   * The class region is empty in one of the masks; the metric is undefined.
   */
  MCIC_STATUS_EMPTY_MASK = 5,
  /**
   * An internal panic was caught.
   */
  MCIC_STATUS_PANIC = 6,
} McicStatus;

/**
 * Opaque model handle.
 */
typedef struct McicModel McicModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null if there was
 * none. The pointer stays valid until the next failing call on this thread.
 */
const char *mcic_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *mcic_version(void);

/**
 * Load a checkpoint. `use_student` selects the student weights instead of
 * the teacher's. On success `*out` receives a handle owned by the caller.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
McicStatus mcic_model_load(const char *path, bool use_student, McicModel **out);

/**
 * Release a model handle. Null is ignored.
 *
 * # Safety
 * `model` must be null or a handle from [`mcic_model_load`] not yet freed.
 */
void mcic_model_free(McicModel *model);

/**
 * Square input side the model was trained at, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
uint32_t mcic_model_input_size(const McicModel *model);

/**
 * Segment one raw slice (`height*width` floats, row-major). The slice is
 * center-cropped or padded to the model input and z-scored, exactly as in
 * training; `out_labels` receives `height*width` labels at the original size.
 *
 * # Safety
 * `values` must hold `height*width` floats and `out_labels` as many bytes.
 */
McicStatus mcic_model_predict(const McicModel *model,
                              const float *values,
                              uint32_t height,
                              uint32_t width,
                              uint8_t *out_labels);

/**
 * Per-slice z-score normalization (population std) into `out`.
 *
 * # Safety
 * `values` and `out` must each hold `height*width` floats; they may alias.
 */
McicStatus mcic_zscore_normalize(const float *values, uint32_t height, uint32_t width, float *out);

/**
 * Dice score of `class` (1 or 2) between two label maps.
 *
 * # Safety
 * `pred` and `gt` must hold `height*width` labels; `out` must be writable.
 */
McicStatus mcic_dice(const uint8_t *pred,
                     const uint8_t *gt,
                     uint32_t height,
                     uint32_t width,
                     uint8_t class_,
                     double *out);

/**
 * Symmetric HD95 (pixel units) of `class` between two label maps. Returns
 * `EmptyMask` when the class is missing from either map.
 *
 * # Safety
 * `pred` and `gt` must hold `height*width` labels; `out` must be writable.
 */
McicStatus mcic_hd95(const uint8_t *pred,
                     const uint8_t *gt,
                     uint32_t height,
                     uint32_t width,
                     uint8_t class_,
                     double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MCIC_H */
