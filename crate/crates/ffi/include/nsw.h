#ifndef NSW_H
#define NSW_H

/* Generated by cbindgen from nsw-ffi; regenerate with `cargo build -p nsw-ffi`. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible entry point.
 */
typedef enum NswStatus {
  NswStatus_Ok = 0,
  NswStatus_NullPointer = 1,
  NswStatus_InvalidInput = 2,
  NswStatus_SolverAbort = 3,
  NswStatus_CertificationFailed = 4,
  NswStatus_Oversize = 5,
} NswStatus;

/**
 * Opaque validated instance handle.
 */
typedef struct NswInstance NswInstance;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Most recent error message for this thread, or null if none. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *nsw_last_error_message(void);

/**
 * Parses and validates an instance from its JSON form.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be a valid pointer.
 * On `Ok` the caller owns the handle and must release it with
 * [`nsw_instance_free`].
 */
enum NswStatus nsw_instance_from_json(const char *json, struct NswInstance **out);

/**
 * Releases an instance handle. Null is ignored.
 *
 * # Safety
 * `inst` must have come from [`nsw_instance_from_json`] and not have been
 * freed already.
 */
void nsw_instance_free(struct NswInstance *inst);

/**
 * Agent and good counts of a parsed instance.
 *
 * # Safety
 * `inst` must be a live handle; `n_agents`/`n_goods` may be null to skip.
 */
enum NswStatus nsw_instance_shape(const struct NswInstance *inst,
                                  uintptr_t *n_agents,
                                  uintptr_t *n_goods);

/**
 * Runs the solver with `epsilon` given as an exact rational literal like
 * `"1/100"` and writes the solver-output JSON.
 *
 * # Safety
 * `inst` must be a live handle, `epsilon` a NUL-terminated string, and
 * `out_json` a valid pointer. The returned string is released with
 * [`nsw_string_free`].
 */
enum NswStatus nsw_solve_json(const struct NswInstance *inst, const char *epsilon, char **out_json);

/**
 * Certifies a solver-output JSON against the instance and writes the
 * certificate JSON. Returns `CertificationFailed` when the certificate does
 * not pass; the certificate is still written in that case.
 *
 * # Safety
 * Same pointer contracts as [`nsw_solve_json`].
 */
enum NswStatus nsw_certify_json(const struct NswInstance *inst,
                                const char *solution_json,
                                char **out_json);

/**
 * Brute-forces the exact optimum and writes the oracle JSON. `max_states`
 * of 0 uses the built-in guard; oversized state spaces return `Oversize`.
 *
 * # Safety
 * Same pointer contracts as [`nsw_solve_json`].
 */
enum NswStatus nsw_oracle_json(const struct NswInstance *inst,
                               uint64_t max_states,
                               char **out_json);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must have come from this library and not have been freed already.
 */
void nsw_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NSW_H */
