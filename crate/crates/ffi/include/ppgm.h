#ifndef PPGM_H
#define PPGM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PpgmPolicy {
  PPGM_POLICY_OPEN = 0,
  PPGM_POLICY_SHARED_DOCUMENT = 1,
  PPGM_POLICY_TOTALLY_PRIVATE = 2,
} PpgmPolicy;

typedef enum PpgmStatus {
  PPGM_STATUS_OK = 0,
  PPGM_STATUS_NULL_ARGUMENT = 1,
  PPGM_STATUS_INVALID_ARGUMENT = 2,
  /*
   Missing keys, unknown name, nothing to do yet.
   */
  PPGM_STATUS_PRECONDITION = 3,
  /*
   A storing node refused a PUT.
   */
  PPGM_STATUS_REJECTED = 4,
  /*
   Forged or inconsistent data.
   */
  PPGM_STATUS_INTEGRITY = 5,
  PPGM_STATUS_IO = 6,
  PPGM_STATUS_PANIC = 7,
} PpgmStatus;

/*
 A group as held by its creator and administrator.
 */
typedef struct PpgmGroup PpgmGroup;

typedef struct PpgmPrincipal PpgmPrincipal;

/*
 A simulated DHT plus the randomness used by operations on it.
 */
typedef struct PpgmSim PpgmSim;

/*
 Bytes allocated by the library; release with `ppgm_buffer_free`.
 */
typedef struct PpgmBuffer {
  uint8_t *data;
  size_t len;
} PpgmBuffer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Short description of a status code; static storage.
 */
const char *ppgm_status_str(enum PpgmStatus status);

/*
 New simulator with the default latency model.

 # Safety
 `out` must be a valid pointer.
 */
enum PpgmStatus ppgm_sim_new(uint64_t seed,
                             size_t capacity,
                             uint32_t replication,
                             struct PpgmSim **out);

/*
 Restores a simulator snapshot; `seed` drives later operations.

 # Safety
 `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PpgmStatus ppgm_sim_load(const char *path, uint64_t seed, struct PpgmSim **out);

/*
 # Safety
 `sim` must come from `ppgm_sim_new` or `ppgm_sim_load`; `path` must be
 a NUL-terminated string.
 */
enum PpgmStatus ppgm_sim_save(struct PpgmSim *sim, const char *path);

/*
 Number of DHT operations applied so far.

 # Safety
 `sim` must be a live handle and `out` a valid pointer.
 */
enum PpgmStatus ppgm_sim_op_count(struct PpgmSim *sim, uint64_t *out);

/*
 # Safety
 `sim` must be null or a handle not yet freed.
 */
void ppgm_sim_free(struct PpgmSim *sim);

/*
 Creates a group and publishes `name` in the directory.

 # Safety
 `sim` must be a live handle, `name` NUL-terminated, `out` valid.
 */
enum PpgmStatus ppgm_group_create(struct PpgmSim *sim,
                                  const char *name,
                                  enum PpgmPolicy policy,
                                  struct PpgmGroup **out);

/*
 Processes pending join requests; `accepted` receives the number admitted.

 # Safety
 `sim` and `group` must be live handles; `accepted` may be null.
 */
enum PpgmStatus ppgm_group_process_joins(struct PpgmSim *sim,
                                         struct PpgmGroup *group,
                                         size_t *accepted);

/*
 Current member count and list counter, as read by the administrator.

 # Safety
 `sim` and `group` must be live handles; outputs may be null.
 */
enum PpgmStatus ppgm_group_members(struct PpgmSim *sim,
                                   struct PpgmGroup *group,
                                   size_t *count,
                                   uint64_t *counter);

/*
 Writes the wall with the administrator's keys.

 # Safety
 `sim` and `group` must be live handles; `data` must hold `len` bytes.
 */
enum PpgmStatus ppgm_group_wall_write(struct PpgmSim *sim,
                                      struct PpgmGroup *group,
                                      const uint8_t *data,
                                      size_t len);

/*
 The group's root address (20 bytes) into `out`.

 # Safety
 `group` must be a live handle and `out` must have room for 20 bytes.
 */
enum PpgmStatus ppgm_group_root_address(struct PpgmGroup *group, uint8_t *out);

/*
 # Safety
 `group` must be null or a handle not yet freed.
 */
void ppgm_group_free(struct PpgmGroup *group);

/*
 Creates an anonymous principal (nothing goes to the directory).

 # Safety
 `sim` must be a live handle and `out` a valid pointer.
 */
enum PpgmStatus ppgm_principal_new(struct PpgmSim *sim, uint64_t tag, struct PpgmPrincipal **out);

/*
 Sends a join request to the group registered under `group_name`.

 # Safety
 `sim` and `principal` must be live handles; `group_name` NUL-terminated.
 */
enum PpgmStatus ppgm_principal_request_join(struct PpgmSim *sim,
                                            struct PpgmPrincipal *principal,
                                            const char *group_name);

/*
 Picks up the helo; `Precondition` while none has arrived.

 # Safety
 `sim` and `principal` must be live handles; `group_name` NUL-terminated.
 */
enum PpgmStatus ppgm_principal_complete_join(struct PpgmSim *sim,
                                             struct PpgmPrincipal *principal,
                                             const char *group_name);

/*
 Reads the wall as a member. On success `out` owns a new buffer.

 # Safety
 `sim` and `principal` must be live handles; `group_name` NUL-terminated;
 `out` a valid pointer.
 */
enum PpgmStatus ppgm_principal_wall_read(struct PpgmSim *sim,
                                         struct PpgmPrincipal *principal,
                                         const char *group_name,
                                         struct PpgmBuffer *out);

/*
 Replaces the wall content as a member holding the wall signing key.

 # Safety
 `sim` and `principal` must be live handles; `group_name` NUL-terminated;
 `data` must hold `len` bytes.
 */
enum PpgmStatus ppgm_principal_wall_write(struct PpgmSim *sim,
                                          struct PpgmPrincipal *principal,
                                          const char *group_name,
                                          const uint8_t *data,
                                          size_t len);

/*
 # Safety
 `principal` must be null or a handle not yet freed.
 */
void ppgm_principal_free(struct PpgmPrincipal *principal);

/*
 # Safety
 `buf` must be null or point to a buffer filled by this library.
 */
void ppgm_buffer_free(struct PpgmBuffer *buf);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PPGM_H */
