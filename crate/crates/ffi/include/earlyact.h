#ifndef EARLYACT_H
#define EARLYACT_H

#include <stddef.h>

// Result codes.
typedef enum EaStatus {
  EA_STATUS_OK = 0,
  EA_STATUS_NULL_POINTER = 1,
  EA_STATUS_INVALID_ARGUMENT = 2,
  EA_STATUS_IO = 3,
  EA_STATUS_FORMAT = 4,
  EA_STATUS_SHAPE = 5,
  EA_STATUS_CONFIG = 6,
  EA_STATUS_CONTRACT = 7,
  EA_STATUS_INTERNAL = 8,
} EaStatus;

// A loaded model.
typedef struct EaModel EaModel;

// Recurrent state of one clip being streamed segment by segment.
typedef struct EaState EaState;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Loads a checkpoint written by `earlyact train`.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be a valid pointer.
enum EaStatus ea_model_load(const char *path, struct EaModel **out);

// Releases a model. Null is ignored.
//
// # Safety
// `model` must come from [`ea_model_load`] and not be used afterwards.
void ea_model_free(struct EaModel *model);

// Class count, frame shape and segment count of a model.
//
// # Safety
// `model` must be a live handle; each output pointer may be null.
enum EaStatus ea_model_info(const struct EaModel *model,
                            size_t *num_classes,
                            size_t *segments,
                            size_t *channels,
                            size_t *height,
                            size_t *width);

// Fresh streaming state (no segments observed).
//
// # Safety
// `model` must be a live handle; `out` a valid pointer.
enum EaStatus ea_state_new(const struct EaModel *model, struct EaState **out);

// Releases a state. Null is ignored.
//
// # Safety
// `state` must come from [`ea_state_new`] and not be used afterwards.
void ea_state_free(struct EaState *state);

// Segments folded into `state` so far; 0 for null.
//
// # Safety
// `state` must be a live handle or null.
size_t ea_state_segments_seen(const struct EaState *state);

// Feeds the frames of the next segment: samples its centred 5-frame
// window, encodes it, advances `state` and writes `num_classes` logits.
// On failure `state` is unchanged.
//
// # Safety
// `frames` must hold `n_frames × C × H × W` doubles and `logits` be
// writable for `logits_len` doubles.
enum EaStatus ea_state_step(const struct EaModel *model,
                            struct EaState *state,
                            const double *frames,
                            size_t n_frames,
                            double *logits,
                            size_t logits_len);

// Runs the model on the first `k` of `segments` segments of a clip of
// `n_frames` frames and writes `k × num_classes` logits, step-major.
//
// # Safety
// `frames` must hold `n_frames × C × H × W` doubles and `logits` be
// writable for `logits_len` doubles.
enum EaStatus ea_predict_partial(const struct EaModel *model,
                                 const double *frames,
                                 size_t n_frames,
                                 size_t k,
                                 size_t segments,
                                 double *logits,
                                 size_t logits_len);

// Message of the last failure on this thread; empty if none. The pointer
// stays valid until the next failing call on the same thread.
const char *ea_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *ea_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EARLYACT_H */
