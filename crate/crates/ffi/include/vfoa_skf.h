#ifndef VFOA_SKF_H
#define VFOA_SKF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum VfoaStatus {
  VFOA_STATUS_OK = 0,
  VFOA_STATUS_NULL_POINTER = 1,
  // Bad argument at the C boundary: invalid UTF-8, wrong length, index
  // out of range.
  VFOA_STATUS_INVALID_ARGUMENT = 2,
  VFOA_STATUS_IO = 3,
  // Malformed JSON or CSV input.
  VFOA_STATUS_FORMAT = 4,
  // Well-formed input that violates the model: scene, parameters,
  // table, labels or observations.
  VFOA_STATUS_INVALID_INPUT = 5,
  VFOA_STATUS_NUMERICAL = 6,
  // A query that needs at least one absorbed frame.
  VFOA_STATUS_NO_FRAME = 7,
  VFOA_STATUS_PANIC = 8,
} VfoaStatus;

// Online tracker: the first frame initializes, later frames update.
typedef struct VfoaTracker VfoaTracker;

// Observation of one target at one frame. Flags are 0 or 1.
typedef struct VfoaTargetObservation {
  int32_t has_position;
  double x;
  double y;
  double z;
  int32_t has_direction;
  // Degrees.
  double pan;
  // Degrees.
  double tilt;
  // Known VFOA of an untracked active target, or -1.
  int64_t vfoa;
} VfoaTargetObservation;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call into this library on the
// same thread.
const char *vfoa_last_error(void);

// Library version as a static NUL-terminated string.
const char *vfoa_version(void);

// Creates a tracker for the scene in `scene_path`. `params_path` and
// `table_path` may be null for the standard initialization and a uniform
// table. `init_max_iter` of 0 keeps the default.
//
// # Safety
// Path arguments must be null or NUL-terminated strings; `out` must be a
// valid pointer.
enum VfoaStatus vfoa_tracker_new(const char *scene_path,
                                 const char *params_path,
                                 const char *table_path,
                                 uint32_t init_max_iter,
                                 struct VfoaTracker **out);

// # Safety
// `t` must be null or a handle from [`vfoa_tracker_new`] not yet freed.
void vfoa_tracker_free(struct VfoaTracker *t);

// Number of targets `N + M` in the scene; weight vectors have one more
// entry (label 0).
//
// # Safety
// `t` must be a live handle and `out` a valid pointer.
enum VfoaStatus vfoa_tracker_num_targets(const struct VfoaTracker *t, uint32_t *out);

// Number of tracked persons; estimates are indexed `0..count` in id order.
//
// # Safety
// `t` must be a live handle and `out` a valid pointer.
enum VfoaStatus vfoa_tracker_num_persons(const struct VfoaTracker *t, uint32_t *out);

// Absorbs one frame. `obs` holds one entry per target in id order
// (`count` must equal the number of targets). On failure the tracker
// keeps its previous state.
//
// # Safety
// `t` must be a live handle and `obs` must point to `count` entries.
enum VfoaStatus vfoa_tracker_step(struct VfoaTracker *t,
                                  const struct VfoaTargetObservation *obs,
                                  uintptr_t count);

// Estimate for the tracked person at `person_index`: its id, MAP VFOA
// label, gaze of that hypothesis in degrees, and optionally the weights of
// all labels. `weights` may be null; otherwise `weights_len` must be at
// least the number of targets plus one.
//
// # Safety
// `t` must be a live handle; output pointers must be valid; `weights`
// must be null or point to `weights_len` doubles.
enum VfoaStatus vfoa_tracker_estimate(const struct VfoaTracker *t,
                                      uint32_t person_index,
                                      uint32_t *person_id,
                                      uint32_t *vfoa,
                                      double *gaze_pan,
                                      double *gaze_tilt,
                                      double *weights,
                                      uintptr_t weights_len);

// Largest gaze-to-head distance after the last update, degrees (0 before
// the second frame).
//
// # Safety
// `t` must be a live handle and `out` a valid pointer.
enum VfoaStatus vfoa_tracker_last_gaze_head_distance(const struct VfoaTracker *t, double *out);

// Tracks a whole recording (`<stem>`, `<stem>.json` or `<stem>.csv`) and
// writes the per-frame CSV the command-line `track` produces.
//
// # Safety
// Path arguments must be null (params, table only) or NUL-terminated
// strings.
enum VfoaStatus vfoa_track_recording(const char *recording_path,
                                     const char *params_path,
                                     const char *table_path,
                                     const char *out_csv_path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VFOA_SKF_H */
