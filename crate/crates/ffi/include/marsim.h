#ifndef MARSIM_H
#define MARSIM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  MARSIM_STATUS_OK = 0,
  MARSIM_STATUS_NULL_POINTER = 1,
  MARSIM_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Scenario, episode or snapshot rejected.
   */
  MARSIM_STATUS_CONFIG = 3,
  /**
   * Simulation failed while stepping.
   */
  MARSIM_STATUS_RUNTIME = 4,
  /**
   * The output buffer was too small; the required size has been written.
   */
  MARSIM_STATUS_BUFFER_TOO_SMALL = 5,
  /**
   * The episode ended; call `marsim_env_reset`.
   */
  MARSIM_STATUS_EPISODE_DONE = 6,
  MARSIM_STATUS_PANIC = 7,
} MarsimStatus;

/**
 * An episode environment.
 */
typedef struct MarsimEnv MarsimEnv;

/**
 * A running world.
 */
typedef struct MarsimWorld MarsimWorld;

/**
 * Vehicle state in the local north-east-down frame.
 */
typedef struct {
  double position[3];
  /**
   * Body-to-NED rotation as w, x, y, z.
   */
  double orientation[4];
  /**
   * u, v, w, p, q, r in the body frame.
   */
  double nu[6];
  bool grounded;
} MarsimVehicleState;

typedef struct {
  double reward;
  bool done;
  bool success;
  bool truncated;
  bool clamped;
  uint64_t step;
  double t;
} MarsimStepResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *marsim_last_error(void);

void marsim_clear_error(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *marsim_version(void);

/**
 * Loads a scenario file and creates a world at tick 0.
 *
 * # Safety
 * `path` must be a nul-terminated string and `out` a valid pointer.
 */
MarsimStatus marsim_world_load(const char *path, MarsimWorld **out);

/**
 * Creates a world from scenario JSON; relative asset paths resolve against
 * `base_dir`, or the working directory when it is null.
 *
 * # Safety
 * String arguments must be nul-terminated and `out` a valid pointer.
 */
MarsimStatus marsim_world_from_json(const char *json, const char *base_dir, MarsimWorld **out);

/**
 * # Safety
 * `world` must come from a `marsim_world_*` constructor and not be used afterwards.
 */
void marsim_world_free(MarsimWorld *world);

/**
 * Advances `ticks` ticks. On a runtime failure the world stays at the failing tick.
 *
 * # Safety
 * `world` must be a live handle.
 */
MarsimStatus marsim_world_step(MarsimWorld *world, uint64_t ticks);

/**
 * Simulation time in seconds and the tick counter.
 *
 * # Safety
 * `world` must be a live handle; either output may be null.
 */
MarsimStatus marsim_world_clock(const MarsimWorld *world, double *time, uint64_t *tick);

/**
 * # Safety
 * `world` and `count` must be valid pointers.
 */
MarsimStatus marsim_world_vehicle_count(const MarsimWorld *world, size_t *count);

/**
 * Copies the id of vehicle `index` into `buf`.
 *
 * # Safety
 * `world` must be a live handle; `buf` must hold `len` bytes or be null.
 */
MarsimStatus marsim_world_vehicle_id(const MarsimWorld *world,
                                     size_t index,
                                     char *buf,
                                     size_t len,
                                     size_t *needed);

/**
 * # Safety
 * `world` must be a live handle, `id` nul-terminated and `out` valid.
 */
MarsimStatus marsim_world_vehicle_state(const MarsimWorld *world,
                                        const char *id,
                                        MarsimVehicleState *out);

/**
 * Queues a command given as JSON, e.g. `{"op": "abort", "vehicle": "auv1"}`.
 * It takes effect at the start of the next tick; the kernel reports
 * commands it cannot apply as events in the tick record.
 *
 * # Safety
 * `world` must be a live handle and `command` nul-terminated.
 */
MarsimStatus marsim_world_submit(MarsimWorld *world, const char *command);

/**
 * Serializes the full world state as JSON into `buf`. Call with a null
 * buffer to learn the size through `needed`.
 *
 * # Safety
 * `world` must be a live handle; `buf` must hold `len` bytes or be null.
 */
MarsimStatus marsim_world_snapshot(const MarsimWorld *world, char *buf, size_t len, size_t *needed);

/**
 * Replaces the world state with a snapshot taken from the same scenario.
 * The world is unchanged on failure.
 *
 * # Safety
 * `world` must be a live handle and `snapshot` nul-terminated.
 */
MarsimStatus marsim_world_restore(MarsimWorld *world, const char *snapshot);

/**
 * Hex SHA-256 of all vehicle state (64 characters plus nul).
 *
 * # Safety
 * `world` must be a live handle; `buf` must hold `len` bytes.
 */
MarsimStatus marsim_world_state_hash(const MarsimWorld *world, char *buf, size_t len);

/**
 * Loads an episode file. Call `marsim_env_reset` before stepping.
 *
 * # Safety
 * `path` must be nul-terminated and `out` a valid pointer.
 */
MarsimStatus marsim_env_load(const char *path, MarsimEnv **out);

/**
 * # Safety
 * `env` must come from `marsim_env_load` and not be used afterwards.
 */
void marsim_env_free(MarsimEnv *env);

/**
 * Observation and action vector lengths.
 *
 * # Safety
 * `env` must be a live handle; either output may be null.
 */
MarsimStatus marsim_env_dims(const MarsimEnv *env, size_t *obs_dim, size_t *action_dim);

/**
 * Starts a new episode; the first observation is written to `obs`.
 *
 * # Safety
 * `env` must be a live handle and `obs` must hold `obs_len` doubles.
 */
MarsimStatus marsim_env_reset(MarsimEnv *env, uint64_t seed, double *obs, size_t obs_len);

/**
 * Applies one action for a decision interval. Out-of-range actions are
 * clamped and flagged; a wrong length or non-finite value leaves the
 * episode untouched.
 *
 * # Safety
 * `env` must be a live handle, `action` must hold `action_len` doubles,
 * `obs` must hold `obs_len` doubles and `result` must be valid.
 */
MarsimStatus marsim_env_step(MarsimEnv *env,
                             const double *action,
                             size_t action_len,
                             double *obs,
                             size_t obs_len,
                             MarsimStepResult *result);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MARSIM_H */
