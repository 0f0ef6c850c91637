#ifndef STEER_H
#define STEER_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum SteerStatus {
  STEER_STATUS_OK = 0,
  STEER_STATUS_NULL_POINTER = 1,
  /*
   Bad shape, contract violation, or malformed config.
   */
  STEER_STATUS_INVALID_ARGUMENT = 2,
  STEER_STATUS_IO = 3,
  STEER_STATUS_NUMERIC = 4,
  STEER_STATUS_CHECKPOINT_MISMATCH = 5,
  STEER_STATUS_PANIC = 6,
} SteerStatus;

/*
 Opaque model handle.
 */
typedef struct SteerModel SteerModel;

/*
 Static facts about a loaded model.
 */
typedef struct SteerModelInfo {
  size_t seq_len;
  size_t input_h;
  size_t input_w;
  /*
   Predictions per sample (`seq_len` for sequence models, 1 otherwise).
   */
  size_t output_steps;
  bool uses_flow;
  bool predicts_speed;
} SteerModelInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failure on this thread, or null. The pointer stays
 valid until the next failing call on the same thread.
 */
const char *steer_last_error_message(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *steer_version(void);

/*
 Builds a freshly initialised model from the `model` keys of a run config
 file.

 # Safety
 `config_path` must be a NUL-terminated string; `out` must be writable.
 */
enum SteerStatus steer_model_new(const char *config_path, uint64_t seed, struct SteerModel **out);

/*
 Loads a trained model; the checkpoint must match the config's architecture.

 # Safety
 Paths must be NUL-terminated strings; `out` must be writable.
 */
enum SteerStatus steer_model_load(const char *config_path,
                                  const char *checkpoint_path,
                                  struct SteerModel **out);

/*
 Releases a handle; null is ignored.

 # Safety
 `model` must come from this library and not be used afterwards.
 */
void steer_model_free(struct SteerModel *model);

/*
 # Safety
 `model` must be a live handle and `info` writable.
 */
enum SteerStatus steer_model_info(const struct SteerModel *model, struct SteerModelInfo *info);

/*
 Runs a forward pass.

 `rgb` (and `flow` for flow models) hold `batch × seq_len × 3 × H × W`
 values in `[0, 1]`, channel-planar per frame; `flow` may be null for
 models without a flow branch. `angle_out` receives `batch × output_steps`
 values; `speed_out` the same count when the model predicts speed, and
 may be null otherwise.

 # Safety
 Buffers must hold the stated number of elements.
 */
enum SteerStatus steer_model_predict(const struct SteerModel *model,
                                     const double *rgb,
                                     const double *flow,
                                     size_t batch,
                                     double *angle_out,
                                     double *speed_out);

/*
 Dense flow from `prev` to `next` with default solver settings. Frames are
 row-major `H × W × 3` in `[0, 1]`; `u_out` and `v_out` receive `H × W`
 values in pixels per frame.

 # Safety
 Buffers must hold the stated number of elements.
 */
enum SteerStatus steer_flow_compute(const double *prev,
                                    const double *next,
                                    size_t width,
                                    size_t height,
                                    double *u_out,
                                    double *v_out);

/*
 HSV colour coding of a flow field into 8-bit RGB (`H × W × 3`).

 # Safety
 Buffers must hold the stated number of elements.
 */
enum SteerStatus steer_flow_encode_hsv(const double *u,
                                       const double *v,
                                       size_t width,
                                       size_t height,
                                       double mag_cap,
                                       uint8_t *rgb_out);

/*
 Exponential smoothing with `factor` in `(0, 1]` weighting the newest value.

 # Safety
 `series` and `out` must hold `len` elements; they may alias.
 */
enum SteerStatus steer_exp_smooth(const double *series, size_t len, double factor, double *out);

/*
 Root-mean-square error of two equally long series.

 # Safety
 `pred` and `target` must hold `len` elements; `out` must be writable.
 */
enum SteerStatus steer_rmse(const double *pred, const double *target, size_t len, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STEER_H */
