#ifndef SNAPPATTERN_H
#define SNAPPATTERN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SnapStatus {
  SNAP_STATUS_OK = 0,
  SNAP_STATUS_NULL_ARGUMENT = 1,
  SNAP_STATUS_INVALID_UTF8 = 2,
  SNAP_STATUS_INVALID_ARGUMENT = 3,
  SNAP_STATUS_PARSE = 4,
  SNAP_STATUS_NOT_FOUND = 5,
  SNAP_STATUS_BUFFER_TOO_SMALL = 6,
  // Retry budget spent; no further delay.
  SNAP_STATUS_EXHAUSTED = 7,
  SNAP_STATUS_PANIC = 99,
} SnapStatus;

typedef enum SnapAdmission {
  SNAP_ADMISSION_ADMIT = 0,
  SNAP_ADMISSION_PROBE = 1,
  SNAP_ADMISSION_REJECT = 2,
} SnapAdmission;

typedef enum SnapCircuitState {
  SNAP_CIRCUIT_STATE_CLOSED = 0,
  SNAP_CIRCUIT_STATE_OPEN = 1,
  SNAP_CIRCUIT_STATE_HALF_OPEN = 2,
} SnapCircuitState;

// Opaque circuit breaker.
typedef struct SnapBreaker SnapBreaker;

// Opaque token bucket.
typedef struct SnapBucket SnapBucket;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failure on this thread, or null. Valid until the
// next failing call on the same thread.
const char *snap_last_error(void);

// # Safety
// `s` must come from this library, or be null.
void snap_string_free(char *s);

// # Safety
// `out` must be writable.
enum SnapStatus snap_breaker_new(uint32_t failure_threshold,
                                 uint64_t open_duration_ms,
                                 uint32_t half_open_max_probes,
                                 struct SnapBreaker **out);

// # Safety
// `b` must come from [`snap_breaker_new`] and not be used afterwards.
void snap_breaker_free(struct SnapBreaker *b);

// # Safety
// `b` must be a live handle and `out` writable.
enum SnapStatus snap_breaker_admit(const struct SnapBreaker *b,
                                   uint64_t now_ms,
                                   enum SnapAdmission *out);

// Records a final request outcome and writes the resulting state.
//
// # Safety
// `b` must be a live handle; `out_state` may be null.
enum SnapStatus snap_breaker_record(const struct SnapBreaker *b,
                                    bool success,
                                    uint64_t now_ms,
                                    enum SnapCircuitState *out_state);

// # Safety
// `b` must be a live handle and `out` writable.
enum SnapStatus snap_breaker_state(const struct SnapBreaker *b, enum SnapCircuitState *out);

// A full bucket whose clock starts at `now_ms`.
//
// # Safety
// `out` must be writable.
enum SnapStatus snap_bucket_new(uint32_t capacity,
                                double refill_per_second,
                                uint64_t now_ms,
                                struct SnapBucket **out);

// # Safety
// `b` must come from [`snap_bucket_new`] and not be used afterwards.
void snap_bucket_free(struct SnapBucket *b);

// Takes one token if available. On rejection `retry_after_s` holds the
// whole seconds until a token is back; on admission it is 0.
//
// # Safety
// `b` must be a live handle not used concurrently; outputs must be writable.
enum SnapStatus snap_bucket_admit(struct SnapBucket *b,
                                  uint64_t now_ms,
                                  bool *admitted,
                                  uint64_t *retry_after_s);

// Backoff before retry number `attempt_index + 1`; `Exhausted` once
// `attempt_index >= max_retries`.
//
// # Safety
// `out_ms` must be writable.
enum SnapStatus snap_retry_delay_ms(uint32_t max_retries,
                                    uint64_t backoff_base_ms,
                                    double backoff_multiplier,
                                    uint32_t attempt_index,
                                    double *out_ms);

// Active users at `t_s` seconds into a step-ramp run.
//
// # Safety
// `out` must be writable.
enum SnapStatus snap_concurrency_at(uint32_t step_users,
                                    uint64_t step_interval_s,
                                    uint64_t duration_s,
                                    double t_s,
                                    uint32_t *out);

// Renders the documents an injection applies. `selection_json` is a
// pattern selection object, e.g. `{"pattern":"circuit_breaker",
// "target_service":"filter-service"}`.
//
// # Safety
// String arguments must be NUL-terminated; `out` must be writable. The
// string written to `out` is released with [`snap_string_free`].
enum SnapStatus snap_plan_injection(const char *manifests_yaml,
                                    const char *selection_json,
                                    char **out);

// Per-window energy for one container's cumulative counter samples.
// Writes up to `capacity` values and the required count to `out_count`;
// returns `BufferTooSmall` when `capacity` is short.
//
// # Safety
// `timestamps_s` and `joules_total` must each hold `n` values; `out`
// must hold `capacity` values (may be null when `capacity` is 0).
enum SnapStatus snap_window_energy(const double *timestamps_s,
                                   const double *joules_total,
                                   size_t n,
                                   uint64_t window_seconds,
                                   double *out,
                                   size_t capacity,
                                   size_t *out_count);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SNAPPATTERN_H */
