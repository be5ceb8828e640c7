#ifndef IFORGE_H
#define IFORGE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum IforgeStatus {
  IFORGE_STATUS_OK = 0,
  IFORGE_STATUS_NULL_POINTER = 1,
  IFORGE_STATUS_INVALID_ARGUMENT = 2,
  IFORGE_STATUS_PARSE = 3,
  IFORGE_STATUS_IO = 4,
  /**
   * the filter found no input satisfying its hard rows; the returned
   * input minimizes the violation
   */
  IFORGE_STATUS_INFEASIBLE = 5,
  /**
   * a closed-loop guarantee failed
   */
  IFORGE_STATUS_VIOLATION = 6,
  IFORGE_STATUS_PANIC = 7,
} IforgeStatus;

/**
 * ACC barrier with its longitudinal model and gains.
 */
typedef struct IforgeAccBarrier IforgeAccBarrier;

/**
 * Lane-keeping barrier certificate with the vehicle, bounds and gains it
 * is used with.
 */
typedef struct IforgeCertificate IforgeCertificate;

/**
 * Filtered input with slack and feasibility.
 */
typedef struct IforgeFilterResult {
  double u;
  double delta;
  bool feasible;
} IforgeFilterResult;

/**
 * Summary of a simulation run.
 */
typedef struct IforgeSimSummary {
  size_t samples;
  double min_h_lk;
  double min_h_acc;
  double max_u1;
  double max_u2_g;
  double min_headway;
  size_t guarantee_violations;
  size_t assumption_violations;
} IforgeSimSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length, 0 if none.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t iforge_last_error(char *buf, size_t len);

/**
 * Parses a certificate. `config_toml` may be null for the defaults.
 *
 * # Safety
 * String arguments must be null or NUL-terminated; `out` must be writable.
 */
enum IforgeStatus iforge_certificate_parse(const char *text,
                                           const char *config_toml,
                                           struct IforgeCertificate **out);

/**
 * The certificate bundled with the library, for the default configuration.
 *
 * # Safety
 * `out` must be writable.
 */
enum IforgeStatus iforge_certificate_default(struct IforgeCertificate **out);

/**
 * # Safety
 * `cert` must be null or a handle from this library, not yet freed.
 */
void iforge_certificate_free(struct IforgeCertificate *cert);

/**
 * `h_lk` at the lateral state `x1 = (y, ν, Δψ, r)`.
 *
 * # Safety
 * `x1` must point to 4 doubles and `out` to one.
 */
enum IforgeStatus iforge_certificate_h(const struct IforgeCertificate *cert,
                                       const double *x1,
                                       double *out);

/**
 * # Safety
 * `cert` must be a live handle and `out` writable.
 */
enum IforgeStatus iforge_certificate_kappa(const struct IforgeCertificate *cert, double *out);

/**
 * Lane-keeping filter: the input closest to `u_nom` keeping `h_lk`
 * invariant at speed `vf` and yaw-rate disturbance `d`.
 *
 * # Safety
 * `x1` must point to 4 doubles and `out` must be writable.
 */
enum IforgeStatus iforge_lk_filter(const struct IforgeCertificate *cert,
                                   const double *x1,
                                   double vf,
                                   double d,
                                   double u_nom,
                                   struct IforgeFilterResult *out);

/**
 * ACC barrier for a configuration (null for the defaults).
 *
 * # Safety
 * `config_toml` must be null or NUL-terminated; `out` writable.
 */
enum IforgeStatus iforge_acc_barrier_new(const char *config_toml, struct IforgeAccBarrier **out);

/**
 * # Safety
 * `bar` must be null or a live handle from this library.
 */
void iforge_acc_barrier_free(struct IforgeAccBarrier *bar);

/**
 * `h_acc(v_f, v_l, D)`.
 *
 * # Safety
 * `bar` must be a live handle and `out` writable.
 */
enum IforgeStatus iforge_acc_barrier_h(const struct IforgeAccBarrier *bar,
                                       double vf,
                                       double vl,
                                       double dist,
                                       double *out);

/**
 * ACC filter at `(v_f, v_l, D)` with lateral coupling `ν·r`.
 *
 * # Safety
 * `bar` must be a live handle and `out` writable.
 */
enum IforgeStatus iforge_acc_filter(const struct IforgeAccBarrier *bar,
                                    double vf,
                                    double vl,
                                    double dist,
                                    double nu_r,
                                    struct IforgeFilterResult *out);

/**
 * Runs the scenario of the certificate's configuration; writes the trace
 * and panel CSVs to `out_dir` unless it is null.
 *
 * # Safety
 * `cert` must be a live handle, `out_dir` null or NUL-terminated, and
 * `summary` writable.
 */
enum IforgeStatus iforge_simulate(const struct IforgeCertificate *cert,
                                  const char *out_dir,
                                  struct IforgeSimSummary *summary);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IFORGE_H */
