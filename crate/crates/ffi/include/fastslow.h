#ifndef FASTSLOW_H
#define FASTSLOW_H

#include <stdint.h>
#include <stddef.h>

typedef enum FsClass {
  FS_CLASS_MOSTLY_EXPANDING = 0,
  FS_CLASS_MOSTLY_CONTRACTING = 1,
  FS_CLASS_MARGINAL = 2,
} FsClass;

/**
 * Status codes; 2 and 3 match the command-line exit codes.
 */
typedef enum FsStatus {
  FS_STATUS_OK = 0,
  FS_STATUS_NULL_POINTER = 1,
  FS_STATUS_VALIDATION = 2,
  FS_STATUS_NUMERICAL = 3,
  FS_STATUS_UTF8 = 4,
  FS_STATUS_PANIC = 5,
} FsStatus;

/**
 * Opaque system handle.
 */
typedef struct FsSystem FsSystem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Builds one of the named systems `sys-a`, `sys-b` or `reference`.
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` a valid pointer.
 */
enum FsStatus fs_system_builtin(const char *name, double epsilon, struct FsSystem **out);

/**
 * Parses a system definition in TOML.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum FsStatus fs_system_from_toml(const char *toml, struct FsSystem **out);

/**
 * # Safety
 * `sys` must be null or a handle from this library that has not been freed.
 */
void fs_system_free(struct FsSystem *sys);

/**
 * # Safety
 * `sys` must be a valid handle.
 */
double fs_system_epsilon(const struct FsSystem *sys);

/**
 * One step of the map.
 *
 * # Safety
 * `sys` must be a valid handle; `x` and `theta` valid pointers, updated in place.
 */
enum FsStatus fs_step(const struct FsSystem *sys, double *x, double *theta);

/**
 * Invariant density of the fibre map at `theta` on the uniform grid `k/n`.
 *
 * # Safety
 * `values` must hold `n` doubles.
 */
enum FsStatus fs_invariant_density(const struct FsSystem *sys,
                                   double theta,
                                   uintptr_t n,
                                   double tol,
                                   double *values);

/**
 * Sink, source and `ψ̄_*` at the sink.
 *
 * # Safety
 * Output pointers must be valid; any of them may be null to skip it.
 */
enum FsStatus fs_classify(const struct FsSystem *sys,
                          enum FsClass *class_,
                          double *psi_bar_star_at_sink,
                          double *theta_minus);

/**
 * Monte-Carlo central Lyapunov exponent.
 *
 * # Safety
 * `estimate` and `stderr` must be valid pointers.
 */
enum FsStatus fs_central_lyapunov(const struct FsSystem *sys,
                                  uintptr_t n_samples,
                                  uintptr_t n_steps,
                                  uint64_t seed,
                                  double *estimate,
                                  double *stderr);

/**
 * Copies the last error message of this thread (NUL-terminated, truncated to `len`).
 * Returns the full message length without the terminator.
 *
 * # Safety
 * `buf` must be null or hold `len` bytes.
 */
uintptr_t fs_last_error(char *buf, uintptr_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FASTSLOW_H */
