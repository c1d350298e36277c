#ifndef QDHOLE_H
#define QDHOLE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Success.
#define QDH_OK 0

// Invalid configuration, parameter out of domain or bad pulse sequence.
#define QDH_ERR_CONFIG 1

// Integration, calibration or I/O failure.
#define QDH_ERR_RUNTIME 2

// A fit did not converge.
#define QDH_ERR_FIT 3

// Null pointer, invalid UTF-8, index out of range or internal panic.
#define QDH_ERR_INVALID -1

// Run configuration.
typedef struct QdhConfig QdhConfig;

// Result of one sweep together with its analysis.
typedef struct QdhResult QdhResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or an empty string.
//
// The pointer stays valid until the next failing call on the same thread.
const char *qdh_last_error(void);

// Library version as a static NUL-terminated string.
const char *qdh_version(void);

// Create a configuration holding the built-in defaults.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
int32_t qdh_config_default(struct QdhConfig **out);

// Parse a TOML configuration. The setup and sweeps are validated here.
//
// # Safety
// `toml` must be a NUL-terminated string and `out` a valid pointer.
int32_t qdh_config_from_toml(const char *toml, struct QdhConfig **out);

// Override seed and shots per point; zero shots keeps the configured value.
//
// # Safety
// `cfg` must be a handle from this library.
int32_t qdh_config_set_run(struct QdhConfig *cfg, uint64_t seed, uint64_t shots_per_point);

// Resolved configuration as TOML. Free with [`qdh_string_free`].
//
// # Safety
// `cfg` must be a handle from this library and `out` a valid pointer.
int32_t qdh_config_to_toml(const struct QdhConfig *cfg, char **out);

// Release a configuration. Null is ignored.
//
// # Safety
// `cfg` must be null or a handle from this library not yet freed.
void qdh_config_free(struct QdhConfig *cfg);

// Run the experiment `kind` (e.g. "ramsey", "pump-scan") and analyse it.
//
// A fit that fails to converge is recorded in the result, not reported here.
//
// # Safety
// `cfg` must be a handle, `kind` a NUL-terminated string, `out` a valid pointer.
int32_t qdh_run(const struct QdhConfig *cfg, const char *kind, struct QdhResult **out);

// Release a result. Null is ignored.
//
// # Safety
// `res` must be null or a handle from this library not yet freed.
void qdh_result_free(struct QdhResult *res);

// Number of sweep points per series, or 0 for a null handle.
//
// # Safety
// `res` must be null or a handle from this library.
size_t qdh_result_points(const struct QdhResult *res);

// Number of scan directions in the result, or 0 for a null handle.
//
// # Safety
// `res` must be null or a handle from this library.
size_t qdh_result_series(const struct QdhResult *res);

// Copy the mean counts per shot of `series` into `buf`, which must hold
// `qdh_result_points` values.
//
// # Safety
// `res` must be a handle and `buf` valid for `len` writes.
int32_t qdh_result_counts(const struct QdhResult *res, size_t series, double *buf, size_t len);

// Look up a derived quantity such as "t2star_s" or "fidelity".
//
// # Safety
// `res` must be a handle, `key` a NUL-terminated string, `out` a valid pointer.
int32_t qdh_result_derived(const struct QdhResult *res, const char *key, double *out);

// [`QDH_ERR_FIT`] when any fit of the result failed, otherwise [`QDH_OK`].
//
// # Safety
// `res` must be a handle from this library.
int32_t qdh_result_require_fits(const struct QdhResult *res);

// The result as CSV with its provenance header. Free with [`qdh_string_free`].
//
// # Safety
// `res` must be a handle and `out` a valid pointer.
int32_t qdh_result_csv(const struct QdhResult *res, char **out);

// The JSON report of the result. Free with [`qdh_string_free`].
//
// # Safety
// `res` must be a handle and `out` a valid pointer.
int32_t qdh_result_report(const struct QdhResult *res, char **out);

// Release a string returned by this library. Null is ignored.
//
// # Safety
// `s` must be null or a string from this library not yet freed.
void qdh_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QDHOLE_H */
