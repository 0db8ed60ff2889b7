#ifndef SPINPROJ_H
#define SPINPROJ_H

#include <stddef.h>
#include <stdint.h>

typedef enum SpStatus {
  SP_STATUS_OK = 0,
  SP_STATUS_NULL_POINTER = 1,
  SP_STATUS_INVALID_UTF8 = 2,
  SP_STATUS_PARSE = 3,
  SP_STATUS_INVALID_INPUT = 4,
  SP_STATUS_NOT_CONVERGED = 5,
  SP_STATUS_INFEASIBLE = 6,
  SP_STATUS_NUMERICAL = 7,
  SP_STATUS_SIZE_CAP = 8,
  SP_STATUS_IO = 9,
  SP_STATUS_BUFFER_TOO_SMALL = 10,
  SP_STATUS_PANIC = 11,
} SpStatus;

/*
 Scan settings, defaults until changed with [`sp_config_set`].
 */
typedef struct SpConfig SpConfig;

/*
 Completed scan.
 */
typedef struct SpScan SpScan;

/*
 Parsed integrals and electron counts.
 */
typedef struct SpSystem SpSystem;

typedef struct SpCuhfResult {
  double lambda;
  /*
   `<H>` without the constraint term.
   */
  double energy;
  double s2_achieved;
  uintptr_t iterations;
} SpCuhfResult;

typedef struct SpScanSummary {
  uintptr_t n_points;
  uintptr_t n_failed;
  double min_s2_target;
  double min_energy;
  uint32_t min_two_s;
  uintptr_t min_k_eff;
  double e_rhf;
  double e_uhf;
  double s2_uhf;
  /*
   NaN when no FCI energy was available.
   */
  double e_fci;
  /*
   Percent of correlation recovered; NaN when undefined.
   */
  double capture_rhf;
  double capture_uhf;
} SpScanSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failing call on this thread, or NULL. The pointer
 stays valid until the next failing call on the same thread.
 */
const char *sp_last_error_message(void);

void sp_clear_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *sp_version(void);

/*
 Loads an FCIDUMP file.

 # Safety
 `path` must be a NUL-terminated string, `out` a writable pointer.
 */
enum SpStatus sp_system_from_file(const char *path, struct SpSystem **out);

/*
 Parses FCIDUMP text held in memory.

 # Safety
 `text` must be a NUL-terminated string, `out` a writable pointer.
 */
enum SpStatus sp_system_from_text(const char *text, struct SpSystem **out);

/*
 # Safety
 `sys` must come from `sp_system_from_*` and not be used afterwards.
 */
void sp_system_free(struct SpSystem *sys);

/*
 Orbital and electron counts.

 # Safety
 `sys` must be a live handle; outputs may be NULL to skip them.
 */
enum SpStatus sp_system_dims(const struct SpSystem *sys,
                             uintptr_t *n_orbitals,
                             uintptr_t *n_alpha,
                             uintptr_t *n_beta);

/*
 # Safety
 `out` must be writable.
 */
enum SpStatus sp_config_new(struct SpConfig **out);

/*
 Sets one option using the key names of the configuration file format,
 for example `grid` = `0.1:1.0:0.1` or `mode` = `restricted`.

 # Safety
 `cfg` must be live, `key` and `value` NUL-terminated.
 */
enum SpStatus sp_config_set(struct SpConfig *cfg, const char *key, const char *value);

/*
 # Safety
 `cfg` must come from [`sp_config_new`] and not be used afterwards.
 */
void sp_config_free(struct SpConfig *cfg);

/*
 Constrained UHF at a fixed `<S^2>` target.

 # Safety
 `sys` must be live, `cfg` live or NULL for defaults, `out` writable.
 */
enum SpStatus sp_cuhf(const struct SpSystem *sys,
                      const struct SpConfig *cfg,
                      double s2_target,
                      struct SpCuhfResult *out);

/*
 Runs a scan over the imposed `<S^2>`.

 # Safety
 `sys` must be live, `cfg` live or NULL for defaults, `out` writable.
 */
enum SpStatus sp_scan_run(const struct SpSystem *sys,
                          const struct SpConfig *cfg,
                          struct SpScan **out);

/*
 # Safety
 `scan` must come from [`sp_scan_run`] and not be used afterwards.
 */
void sp_scan_free(struct SpScan *scan);

/*
 # Safety
 `scan` must be live, `out` writable.
 */
enum SpStatus sp_scan_summary(const struct SpScan *scan, struct SpScanSummary *out);

/*
 Lowest NOCI energy at each grid point, NaN where the point failed.
 Writes `min(len, n_points)` pairs and stores the point count in
 `n_written` when given.

 # Safety
 `targets` and `energies` must each hold `len` doubles.
 */
enum SpStatus sp_scan_curve(const struct SpScan *scan,
                            double *targets,
                            double *energies,
                            uintptr_t len,
                            uintptr_t *n_written);

/*
 Full report as JSON. The string is owned by the scan handle.

 # Safety
 `scan` must be live, `out` writable.
 */
enum SpStatus sp_scan_json(struct SpScan *scan, const char **out);

/*
 Lowest `n_states` FCI energies and `<S^2>` values. `s2_values` may be NULL.

 # Safety
 `energies` (and `s2_values` when given) must hold `n_states` doubles.
 */
enum SpStatus sp_fci(const struct SpSystem *sys,
                     uintptr_t n_states,
                     double *energies,
                     double *s2_values);

/*
 Block-diagonality check of the four-electron reassignment overlap.
 Reports the off-block norm after recoupling and the largest deviation
 from the closed-form blocks.

 # Safety
 Outputs must be writable.
 */
enum SpStatus sp_recouple_check(double g01,
                                double g23,
                                double g03,
                                double g21,
                                double *offblock_norm,
                                double *closed_form_diff);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPINPROJ_H */
