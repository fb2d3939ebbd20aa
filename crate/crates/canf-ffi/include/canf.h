/* C interface to the canf probabilistic load-forecasting library. */

#ifndef CANF_H
#define CANF_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call in this ABI.
 */
typedef enum CanfStatus {
  /**
   * The call succeeded.
   */
  CANF_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  CANF_STATUS_NULL_POINTER = 1,
  /**
   * An argument was out of range or inconsistent with the model.
   */
  CANF_STATUS_INVALID_ARGUMENT = 2,
  /**
   * The bundle could not be read or parsed.
   */
  CANF_STATUS_DATA_ERROR = 3,
  /**
   * A numeric failure (singular covariance, non-finite loss, …).
   */
  CANF_STATUS_NUMERIC_ERROR = 4,
  /**
   * A panic was caught at the boundary; the handle remains usable.
   */
  CANF_STATUS_PANIC = 5,
} CanfStatus;

/**
 * Opaque forecaster handle.
 */
typedef struct CanfForecaster CanfForecaster;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread.
 *
 * The pointer stays valid until the next failing call on the same thread.
 * Never returns null; before any failure the message is empty.
 */
const char *canf_last_error_message(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *canf_version(void);

/**
 * Load a forecaster bundle saved by the library or the `canf fit` command.
 *
 * `path` is the bundle directory. On success `*out` owns the handle; free
 * it with `canf_forecaster_free`.
 *
 * # Safety
 * `path` must be a nul-terminated string and `out` a valid pointer.
 */
enum CanfStatus canf_forecaster_load(const char *path, struct CanfForecaster **out);

/**
 * Free a handle returned by `canf_forecaster_load`. `f` may be null.
 *
 * # Safety
 * `f` must be a pointer previously returned by this library and not freed
 * since.
 */
void canf_forecaster_free(struct CanfForecaster *f);

/**
 * Number of observed values the forecaster conditions on (L + 1).
 *
 * # Safety
 * `f` must be a live handle and `out` a valid pointer.
 */
enum CanfStatus canf_forecaster_window_len(const struct CanfForecaster *f, size_t *out);

/**
 * Forecast horizon K (steps per trajectory).
 *
 * # Safety
 * `f` must be a live handle and `out` a valid pointer.
 */
enum CanfStatus canf_forecaster_horizon(const struct CanfForecaster *f, size_t *out);

/**
 * Write the strategy tag (`"cg"`, `"cgmm"`, `"canf"`, `"jfnn"`, `"arma"`,
 * `"ifnn"`) into `buf` as a nul-terminated string.
 *
 * # Safety
 * `f` must be a live handle and `buf` must point to at least `cap` bytes.
 */
enum CanfStatus canf_forecaster_strategy(const struct CanfForecaster *f, char *buf, size_t cap);

/**
 * Draw `m` forecast trajectories conditioned on an observed window.
 *
 * `window` holds the last L+1 observations in raw units, oldest first.
 * `out` receives `m * K` values in row-major order (trajectory by
 * trajectory), also in raw units. Identical inputs and `seed` produce
 * identical samples.
 *
 * # Safety
 * `f` must be a live handle, `window` must point to `window_len` doubles,
 * and `out` must have room for `m * K` doubles.
 */
enum CanfStatus canf_forecast_sample(const struct CanfForecaster *f,
                                     const double *window,
                                     size_t window_len,
                                     size_t m,
                                     uint64_t seed,
                                     double *out);

/**
 * Pick the `d` cheapest forecast hours by the value-at-risk rule.
 *
 * Conditions the forecaster on `window` (raw units, oldest first), draws
 * `m` trajectories, and writes the selected 1-based hour indices, sorted
 * ascending, into `out_indices` (which must hold `d` values).
 *
 * # Safety
 * `f` must be a live handle, `window` must point to `window_len` doubles,
 * and `out_indices` must have room for `d` values.
 */
enum CanfStatus canf_select_action(const struct CanfForecaster *f,
                                   const double *window,
                                   size_t window_len,
                                   size_t d,
                                   double alpha,
                                   size_t m,
                                   uint64_t seed,
                                   size_t *out_indices);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CANF_H */
