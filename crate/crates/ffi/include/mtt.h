#ifndef MTT_H
#define MTT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum MttStatus {
  MTT_STATUS_OK = 0,
  MTT_STATUS_NULL_POINTER = 1,
  MTT_STATUS_INVALID_ARGUMENT = 2,
  MTT_STATUS_IO = 3,
  MTT_STATUS_PARSE = 4,
  MTT_STATUS_CONFIG = 5,
  MTT_STATUS_BUDGET = 6,
  MTT_STATUS_NUMERICAL = 7,
  MTT_STATUS_OUT_OF_RANGE = 8,
  MTT_STATUS_PANIC = 9,
} MttStatus;

/**
 * Tracker configuration.
 */
typedef struct MttConfig MttConfig;

/**
 * Detections plus optional embeddings.
 */
typedef struct MttFrameSet MttFrameSet;

/**
 * Tracking result.
 */
typedef struct MttTracks MttTracks;

/**
 * One output box.
 */
typedef struct MttTrackRow {
  uint32_t frame;
  uint32_t track_id;
  double x;
  double y;
  double w;
  double h;
  double score;
  /**
   * 1 when the box was filled in across a gap.
   */
  uint8_t interpolated;
} MttTrackRow;

/**
 * Evaluation summary.
 */
typedef struct MttReport {
  double mota;
  double idf1;
  double idp;
  double idr;
  double recall;
  double precision;
  uint64_t fp;
  uint64_t fn_count;
  uint64_t ids;
  uint64_t mt;
  uint64_t pt;
  uint64_t ml;
  uint64_t gt_count;
} MttReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until
 * the next call on the same thread.
 */
const char *mtt_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *mtt_version(void);

/**
 * New configuration with default parameters.
 */
struct MttConfig *mtt_config_new(void);

/**
 * Loads a `key = value` configuration file.
 *
 * # Safety
 * `path` must be a valid C string and `out` a valid pointer.
 */
enum MttStatus mtt_config_load(const char *path, struct MttConfig **out);

/**
 * Sets one parameter by name. Unknown keys are `InvalidArgument`.
 *
 * # Safety
 * `cfg` must come from this library; `key` and `value` must be C strings.
 */
enum MttStatus mtt_config_set(struct MttConfig *cfg, const char *key, const char *value);

/**
 * # Safety
 * `cfg` must come from this library (or be null) and not be used again.
 */
void mtt_config_free(struct MttConfig *cfg);

/**
 * Empty detection set.
 */
struct MttFrameSet *mtt_frameset_new(void);

/**
 * Reads a detection file and, if `emb_path` is not null, its embeddings.
 *
 * # Safety
 * Paths must be C strings (`emb_path` may be null); `out` must be valid.
 */
enum MttStatus mtt_frameset_load(const char *dets_path,
                                 const char *emb_path,
                                 struct MttFrameSet **out);

/**
 * Appends a detection; its id is written to `det_id` when not null.
 *
 * # Safety
 * `fs` must come from this library; `det_id` may be null.
 */
enum MttStatus mtt_frameset_push(struct MttFrameSet *fs,
                                 uint32_t frame,
                                 double x,
                                 double y,
                                 double w,
                                 double h,
                                 double score,
                                 uint32_t *det_id);

/**
 * Attaches an embedding of `len` values to detection `det_id`.
 *
 * # Safety
 * `fs` must come from this library and `values` point to `len` doubles.
 */
enum MttStatus mtt_frameset_set_embedding(struct MttFrameSet *fs,
                                          uint32_t det_id,
                                          const double *values,
                                          size_t len);

/**
 * Number of detections in the set.
 *
 * # Safety
 * `fs` must come from this library or be null (returns 0).
 */
size_t mtt_frameset_len(const struct MttFrameSet *fs);

/**
 * # Safety
 * `fs` must come from this library (or be null) and not be used again.
 */
void mtt_frameset_free(struct MttFrameSet *fs);

/**
 * Runs the tracker. `mode` is `adaptive`, `fixed:L` or `sliding:L`; null
 * means adaptive.
 *
 * # Safety
 * Handles must come from this library; `out` must be valid.
 */
enum MttStatus mtt_track(const struct MttConfig *cfg,
                         const struct MttFrameSet *fs,
                         const char *mode,
                         struct MttTracks **out);

/**
 * Number of tracks.
 *
 * # Safety
 * `t` must come from this library or be null (returns 0).
 */
size_t mtt_tracks_count(const struct MttTracks *t);

/**
 * Number of output rows (boxes), ordered by frame then track id.
 *
 * # Safety
 * `t` must come from this library or be null (returns 0).
 */
size_t mtt_tracks_len(const struct MttTracks *t);

/**
 * Copies row `index` into `row`.
 *
 * # Safety
 * `t` must come from this library; `row` must be valid.
 */
enum MttStatus mtt_tracks_row(const struct MttTracks *t, size_t index, struct MttTrackRow *row);

/**
 * Writes the tracks in MOT format.
 *
 * # Safety
 * `t` must come from this library; `path` must be a C string.
 */
enum MttStatus mtt_tracks_write(const struct MttTracks *t, const char *path);

/**
 * # Safety
 * `t` must come from this library (or be null) and not be used again.
 */
void mtt_tracks_free(struct MttTracks *t);

/**
 * Evaluates a MOT track file against a MOT ground-truth file.
 *
 * # Safety
 * Paths must be C strings; `out` must be valid.
 */
enum MttStatus mtt_evaluate_files(const char *gt_path,
                                  const char *tracks_path,
                                  double iou_min,
                                  struct MttReport *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MTT_H */
