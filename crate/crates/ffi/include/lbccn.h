#ifndef LBCCN_H
#define LBCCN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every call.
 */
typedef enum LbccnStatus {
  LBCCN_STATUS_OK = 0,
  /**
   * Null pointer, bad length, unknown variant or invalid configuration.
   */
  LBCCN_STATUS_INVALID_ARGUMENT = 1,
  /**
   * File missing or unreadable.
   */
  LBCCN_STATUS_IO = 2,
  /**
   * Malformed or incompatible checkpoint.
   */
  LBCCN_STATUS_FORMAT = 3,
  /**
   * Non-finite values.
   */
  LBCCN_STATUS_NUMERIC = 4,
  LBCCN_STATUS_INTERNAL = 5,
  /**
   * A panic was caught at the boundary.
   */
  LBCCN_STATUS_PANIC = 6,
} LbccnStatus;

/**
 * Predictor variant codes accepted by [`lbccn_model_new_default`].
 */
typedef enum LbccnVariant {
  LBCCN_VARIANT_RATFS = 0,
  LBCCN_VARIANT_MASKS = 1,
  LBCCN_VARIANT_MASK_RATF = 2,
} LbccnVariant;

/**
 * Opaque model handle.
 */
typedef struct LbccnModel LbccnModel;

/**
 * Opaque streaming handle; owns a copy of the model weights.
 */
typedef struct LbccnStream LbccnStream;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *lbccn_version(void);

/**
 * Message of the most recent failure on this thread, or NULL. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *lbccn_last_error(void);

/**
 * Builds a freshly initialised model with the default architecture.
 * `variant` is an [`LbccnVariant`] code; `q = 0` keeps the default low band.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for a handle.
 */
enum LbccnStatus lbccn_model_new_default(uint32_t variant,
                                         uint32_t q,
                                         uint64_t seed,
                                         struct LbccnModel **out);

/**
 * Loads a checkpoint written by the `lbccn` tools or [`lbccn_model_save`].
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum LbccnStatus lbccn_model_load(const char *path, struct LbccnModel **out);

/**
 * Writes the model weights and configuration to `path`.
 *
 * # Safety
 * `model` must come from this library; `path` must be NUL-terminated.
 */
enum LbccnStatus lbccn_model_save(const struct LbccnModel *model, const char *path);

/**
 * Releases a model. NULL is ignored.
 *
 * # Safety
 * `model` must come from this library and must not be used afterwards.
 */
void lbccn_model_free(struct LbccnModel *model);

/**
 * Number of real-valued parameters.
 *
 * # Safety
 * `model` must come from this library; `out` must be writable.
 */
enum LbccnStatus lbccn_model_param_count(const struct LbccnModel *model, size_t *out);

/**
 * Sample rate the model expects, in Hz.
 *
 * # Safety
 * `model` must come from this library; `out` must be writable.
 */
enum LbccnStatus lbccn_model_sample_rate(const struct LbccnModel *model, uint32_t *out);

/**
 * Offline enhancement of `len` samples per ear. Outputs have the same length
 * and may alias the inputs.
 *
 * # Safety
 * All four buffers must hold at least `len` floats.
 */
enum LbccnStatus lbccn_enhance(const struct LbccnModel *model,
                               const float *left,
                               const float *right,
                               size_t len,
                               uint32_t sample_rate,
                               float *out_left,
                               float *out_right);

/**
 * Starts a streaming session over a copy of `model`; the model handle may be
 * freed afterwards.
 *
 * # Safety
 * `model` must come from this library; `out` must be writable.
 */
enum LbccnStatus lbccn_stream_new(const struct LbccnModel *model, struct LbccnStream **out);

/**
 * Samples per ear consumed and produced by each [`lbccn_stream_process`].
 *
 * # Safety
 * `stream` must come from this library; `out` must be writable.
 */
enum LbccnStatus lbccn_stream_hop_size(const struct LbccnStream *stream, size_t *out);

/**
 * Delay in samples between an input sample and its enhanced output.
 *
 * # Safety
 * `stream` must come from this library; `out` must be writable.
 */
enum LbccnStatus lbccn_stream_latency(const struct LbccnStream *stream, size_t *out);

/**
 * Processes exactly one hop (`len` must equal the hop size). Outputs may
 * alias the inputs.
 *
 * # Safety
 * All four buffers must hold at least `len` floats.
 */
enum LbccnStatus lbccn_stream_process(struct LbccnStream *stream,
                                      const float *left,
                                      const float *right,
                                      size_t len,
                                      float *out_left,
                                      float *out_right);

/**
 * Releases a streaming session. NULL is ignored.
 *
 * # Safety
 * `stream` must come from this library and must not be used afterwards.
 */
void lbccn_stream_free(struct LbccnStream *stream);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LBCCN_H */
