#ifndef HISD_H
#define HISD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HisdStatus {
  HISD_STATUS_OK = 0,
  HISD_STATUS_NULL_ARGUMENT = 1,
  HISD_STATUS_INVALID_UTF8 = 2,
  HISD_STATUS_IO = 3,
  HISD_STATUS_CHECKPOINT = 4,
  HISD_STATUS_INVALID_ARGUMENT = 5,
  HISD_STATUS_SHAPE = 6,
  HISD_STATUS_INTERNAL = 7,
  HISD_STATUS_PANIC = 8,
} HisdStatus;

/**
 * Opaque handle to a loaded model.
 */
typedef struct HisdModel HisdModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread. Valid until the next
 * call on the same thread; do not free.
 */
const char *hisd_last_error(void);

/**
 * Loads a checkpoint's EMA weights. Free the handle with
 * [`hisd_model_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum HisdStatus hisd_model_load(const char *path, struct HisdModel **out);

/**
 * # Safety
 * `model` must come from [`hisd_model_load`] and not be used afterwards.
 * Null is ignored.
 */
void hisd_model_free(struct HisdModel *model);

/**
 * Side length of the square images the model takes; 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
uint32_t hisd_model_image_size(const struct HisdModel *model);

/**
 * Length of a style vector; 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
uint32_t hisd_model_style_dim(const struct HisdModel *model);

/**
 * Tags, attributes and conditions as JSON. Free the string with
 * [`hisd_string_free`].
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum HisdStatus hisd_model_schema_json(const struct HisdModel *model, char **out);

/**
 * # Safety
 * `s` must come from this library, or be null.
 */
void hisd_string_free(char *s);

/**
 * Applies `edits_json`, a JSON array of edits in order, e.g.
 * `[{"tag":"Hat","attribute":"with","seed":7}]`. Reference edits name an
 * image file. An empty array writes the reconstruction.
 *
 * # Safety
 * `rgb` must point to `len` readable bytes, `out_rgb` to `out_len`
 * writable bytes, and `edits_json` must be NUL-terminated.
 */
enum HisdStatus hisd_translate(const struct HisdModel *model,
                               const uint8_t *rgb,
                               size_t len,
                               const char *edits_json,
                               uint8_t *out_rgb,
                               size_t out_len);

/**
 * Writes the image's style code for `tag` into `out` (`out_len` must equal
 * the style dimension).
 *
 * # Safety
 * Pointer arguments must be valid for the given lengths.
 */
enum HisdStatus hisd_extract(const struct HisdModel *model,
                             const uint8_t *rgb,
                             size_t len,
                             const char *tag,
                             float *out,
                             size_t out_len);

/**
 * `(1 − t)·a + t·b` for two style codes of `tag`, with `t` in [0,1].
 *
 * # Safety
 * `a`, `b` and `out` must each hold `len` floats.
 */
enum HisdStatus hisd_interpolate(const struct HisdModel *model,
                                 const char *tag,
                                 const float *a,
                                 const float *b,
                                 size_t len,
                                 double t,
                                 float *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HISD_H */
