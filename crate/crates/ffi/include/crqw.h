#ifndef CRQW_H
#define CRQW_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes.
typedef enum CrqwStatus {
  CRQW_STATUS_OK = 0,
  CRQW_STATUS_NULL_POINTER = 1,
  // A string argument was not valid UTF-8.
  CRQW_STATUS_INVALID_UTF8 = 2,
  // Bad configuration, primitive, scheduler or workload id.
  CRQW_STATUS_CONFIG = 3,
  // An engine precondition was broken.
  CRQW_STATUS_CONTRACT = 4,
  CRQW_STATUS_IO = 5,
  // The recorded history failed the linearizability check.
  CRQW_STATUS_NOT_LINEARIZABLE = 6,
  // A Rust panic was caught at the boundary.
  CRQW_STATUS_PANIC = 7,
} CrqwStatus;

// Opaque simulator handle.
typedef struct CrqwSim CrqwSim;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Creates a simulator. `config_toml` may be null for the defaults;
// `processes` 0 keeps the configured count. On success `*out` holds a
// handle to release with [`crqw_sim_free`].
//
// # Safety
// String arguments must be null or NUL-terminated; `out` must be writable.
enum CrqwStatus crqw_sim_new(const char *config_toml,
                             const char *primitive,
                             const char *scheduler,
                             const char *workload,
                             uint32_t processes,
                             uint64_t seed,
                             struct CrqwSim **out);

// Releases a handle. Null is ignored.
//
// # Safety
// `sim` must come from [`crqw_sim_new`] and not be used afterwards.
void crqw_sim_free(struct CrqwSim *sim);

// Executes one timestep.
//
// # Safety
// `sim` must be a live handle.
enum CrqwStatus crqw_sim_step(struct CrqwSim *sim);

// Executes up to `steps` timesteps, stopping early once the workload is
// exhausted and every operation has returned.
//
// # Safety
// `sim` must be a live handle.
enum CrqwStatus crqw_sim_run(struct CrqwSim *sim, uint64_t steps);

// Current timestep (number of executed steps). 0 for null.
//
// # Safety
// `sim` must be null or a live handle.
uint64_t crqw_sim_time(const struct CrqwSim *sim);

// Top-level operations completed so far.
//
// # Safety
// `sim` must be null or a live handle.
uint64_t crqw_sim_completed(const struct CrqwSim *sim);

// Operations invoked but not yet returned.
//
// # Safety
// `sim` must be null or a live handle.
uint64_t crqw_sim_in_flight(const struct CrqwSim *sim);

// Largest latency among completed operations.
//
// # Safety
// `sim` must be null or a live handle.
uint64_t crqw_sim_max_latency(const struct CrqwSim *sim);

// Checks the history recorded so far for linearizability. Returns
// `NotLinearizable` with the reason in [`crqw_last_error`] on failure.
//
// # Safety
// `sim` must be a live handle.
enum CrqwStatus crqw_sim_lincheck(struct CrqwSim *sim);

// Writes the history recorded so far as CSV to `path`.
//
// # Safety
// `sim` must be a live handle and `path` NUL-terminated.
enum CrqwStatus crqw_sim_write_history(struct CrqwSim *sim, const char *path);

// Message of the last failing call on this thread; empty if none. The
// pointer stays valid until the next failing call on this thread.
const char *crqw_last_error(void);

// Library version, static string.
const char *crqw_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CRQW_H */
