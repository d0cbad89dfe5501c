#ifndef LDGEC_H
#define LDGEC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LdgecStatus {
  LDGEC_STATUS_OK = 0,
  LDGEC_STATUS_NULL_POINTER = 1,
  LDGEC_STATUS_INVALID_ARGUMENT = 2,
  LDGEC_STATUS_DIMENSION = 3,
  LDGEC_STATUS_CONFIG = 4,
  LDGEC_STATUS_NUMERICAL = 5,
  LDGEC_STATUS_IO = 6,
  LDGEC_STATUS_PANIC = 7,
} LdgecStatus;

typedef enum LdgecEstimator {
  // Unfolded estimator with the SURE-tuned soft threshold.
  LDGEC_ESTIMATOR_LDGEC = 0,
  // Unfolded estimator with the matched Gaussian-prior denoiser.
  LDGEC_ESTIMATOR_MATCHED_GAUSSIAN = 1,
  LDGEC_ESTIMATOR_LS = 2,
  LDGEC_ESTIMATOR_OMP = 3,
} LdgecEstimator;

// One simulated channel, its selection network and measurements.
typedef struct LdgecInstance LdgecInstance;

// A validated system configuration.
typedef struct LdgecSystem LdgecSystem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *ldgec_version(void);

// Message for the last failed call on this thread, or NULL. The pointer is
// valid until the next ldgec call on the same thread.
const char *ldgec_last_error(void);

// Creates a system from a JSON object of system fields; NULL or "" gives
// the desk-scale defaults.
//
// # Safety
// `config_json` must be NULL or a NUL-terminated string; `out` must be a
// valid pointer.
enum LdgecStatus ldgec_system_new(const char *config_json, struct LdgecSystem **out);

// # Safety
// `sys` must be NULL or a handle from `ldgec_system_new` not yet freed.
void ldgec_system_free(struct LdgecSystem *sys);

// Complex entries in a channel (N·M); 0 for a NULL handle.
//
// # Safety
// `sys` must be NULL or a live handle.
size_t ldgec_system_channel_len(const struct LdgecSystem *sys);

// Complex entries in a measurement vector (M·Q·N_RF); 0 for a NULL handle.
//
// # Safety
// `sys` must be NULL or a live handle.
size_t ldgec_system_measurement_len(const struct LdgecSystem *sys);

// Draws trial `trial` for master seed `seed`; the same pair gives the same
// instance as the command-line sweep.
//
// # Safety
// `sys` must be a live handle and `out` a valid pointer.
enum LdgecStatus ldgec_simulate(const struct LdgecSystem *sys,
                                uint64_t seed,
                                uint64_t trial,
                                struct LdgecInstance **out);

// # Safety
// `inst` must be NULL or a handle from `ldgec_simulate` not yet freed.
void ldgec_instance_free(struct LdgecInstance *inst);

// Copies the true channel into `out` (`len` = 2 × channel length).
//
// # Safety
// `inst` must be a live handle and `out` valid for `len` doubles.
enum LdgecStatus ldgec_instance_channel(const struct LdgecInstance *inst, double *out, size_t len);

// Copies the (quantized) measurements into `out` (`len` = 2 × measurement length).
//
// # Safety
// `inst` must be a live handle and `out` valid for `len` doubles.
enum LdgecStatus ldgec_instance_measurements(const struct LdgecInstance *inst,
                                             double *out,
                                             size_t len);

// Replaces the measurements, keeping the channel and selection network.
//
// # Safety
// `inst` must be a live handle and `values` valid for `len` doubles.
enum LdgecStatus ldgec_instance_set_measurements(struct LdgecInstance *inst,
                                                 const double *values,
                                                 size_t len);

// Estimates the channel of `inst` into `out` (`len` = 2 × channel length).
// `layers` = 0 keeps the system default; `probe_seed` drives the Monte
// Carlo divergence probes.
//
// # Safety
// Handles must be live and `out` valid for `len` doubles.
enum LdgecStatus ldgec_estimate(const struct LdgecSystem *sys,
                                const struct LdgecInstance *inst,
                                enum LdgecEstimator estimator,
                                uint32_t layers,
                                uint64_t probe_seed,
                                double *out,
                                size_t len);

// `‖est − truth‖² / ‖truth‖²` over `len` doubles of interleaved complex data.
//
// # Safety
// `est` and `truth` must be valid for `len` doubles; `out` must be valid.
enum LdgecStatus ldgec_nmse(const double *est, const double *truth, size_t len, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LDGEC_H */
