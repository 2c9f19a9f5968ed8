#ifndef EXTREMESEG_H
#define EXTREMESEG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Status codes returned by every fallible function.
 */
typedef enum EsStatus {
  ES_STATUS_OK = 0,
  ES_STATUS_NULL_POINTER = 1,
  ES_STATUS_INVALID_ARGUMENT = 2,
  ES_STATUS_IO = 3,
  ES_STATUS_CHECKPOINT = 4,
  ES_STATUS_NUMERIC = 5,
  ES_STATUS_BUFFER_TOO_SMALL = 6,
  ES_STATUS_PANIC = 7,
} EsStatus;

/*
 Opaque model handle.
 */
typedef struct EsModel EsModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread, or null. Valid until the
 next call into this library on the same thread.
 */
const char *es_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *es_version(void);

/*
 Load a checkpoint from `path` into `*out`.

 # Safety
 `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum EsStatus es_model_load(const char *path, struct EsModel **out);

/*
 Release a handle. Null is ignored.

 # Safety
 `model` must come from [`es_model_load`] and not be used afterwards.
 */
void es_model_free(struct EsModel *model);

/*
 SHA-256 hex of the checkpoint bytes; owned by the handle.

 # Safety
 `model` must be a live handle or null.
 */
const char *es_model_fingerprint(const struct EsModel *model);

/*
 Whether the model accepts a fifth, corrective click.

 # Safety
 `model` must be a live handle; `five_point` must be writable.
 */
enum EsStatus es_model_five_point(const struct EsModel *model, bool *five_point);

/*
 Segment one object.

 `pixels` holds `width * height * channels` bytes, row-major and
 interleaved, with `channels` 1 or 3. `points` holds the clicks as x,y
 pairs in the order left, right, top, bottom, followed by an optional
 corrective click when `num_points` is 5. On success `mask` (of
 `width * height` bytes) receives 1 for foreground and 0 elsewhere.

 # Safety
 All pointers must be valid for the stated lengths.
 */
enum EsStatus es_segment(const struct EsModel *model,
                         const uint8_t *pixels,
                         size_t width,
                         size_t height,
                         size_t channels,
                         const int64_t *points,
                         size_t num_points,
                         uint8_t *mask,
                         size_t mask_len);

/*
 Annotation seconds for `n` objects with extreme clicks and with full
 masks, using the default per-object costs.

 # Safety
 Output pointers must be writable.
 */
enum EsStatus es_budget(size_t n, double *extreme_seconds, double *mask_seconds);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EXTREMESEG_H */
