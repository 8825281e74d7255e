#ifndef RFD_H
#define RFD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes; the nonnegative values match the `rfd` exit codes.
 */
enum RfdStatus
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : int32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  RFD_STATUS_OK = 0,
  RFD_STATUS_ERROR = 1,
  RFD_STATUS_CONFIG_ERROR = 2,
  RFD_STATUS_UNCONVERGED = 3,
  RFD_STATUS_CAP_EXCEEDED = 4,
  RFD_STATUS_NULL_POINTER = -1,
  RFD_STATUS_INVALID_ARGUMENT = -2,
  RFD_STATUS_PANIC = -3,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum RfdStatus RfdStatus;
#else
typedef int32_t RfdStatus;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

/**
 * Parsed run configuration.
 */
typedef struct RfdConfig RfdConfig;

/**
 * Result of a design, certify, oracle or demo run.
 */
typedef struct RfdReport RfdReport;

/**
 * Numeric content of one design row.
 */
typedef struct RfdRow {
  double lambda;
  size_t n_actuators;
  size_t n_sensors;
  size_t n_links;
  double closed_loop_h2;
  double relative_degradation_pct;
  double objective;
  double kkt_residual;
  bool converged;
} RfdRow;

/**
 * Headline quantities of one certificate; absent values are NaN.
 */
typedef struct RfdCertificate {
  size_t t;
  size_t v;
  size_t tau;
  double gamma;
  double beta_upper;
  double nu;
  double snr_threshold;
  double eta;
  double lambda_sufficient;
  double lambda_lo;
  double lambda_hi;
  double error_bound;
  double observed_error;
  bool assumption1;
  bool theorem2_support;
  bool corollary1;
  bool theorem3;
} RfdCertificate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. Valid until the next failing call.
 */
const char *rfd_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *rfd_version(void);

/**
 * Parses a JSON run configuration.
 *
 * # Safety
 * `json` must be a valid NUL-terminated string and `out` a valid pointer.
 */
RfdStatus rfd_config_from_json(const char *json, struct RfdConfig **out);

/**
 * Design config of a built-in demo: `0` chain10, `1` network11.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
RfdStatus rfd_config_demo(int32_t name, uint64_t seed, struct RfdConfig **out);

/**
 * # Safety
 * `cfg` must be null or a handle from this library that has not been freed.
 */
void rfd_config_free(struct RfdConfig *cfg);

/**
 * Runs the λ sweep. An unconverged run still stores the report and returns `Unconverged`.
 *
 * # Safety
 * `cfg` must be a live config handle and `out` a valid pointer.
 */
RfdStatus rfd_design(const struct RfdConfig *cfg, struct RfdReport **out);

/**
 * Certificates for every pair of `ts[0..nt]` × `vs[0..nv]`; empty lists use the configured values.
 *
 * # Safety
 * `cfg` must be a live config handle, `out` a valid pointer, and `ts`/`vs` valid for
 * `nt`/`nv` reads (they may be null when the count is zero).
 */
RfdStatus rfd_certify(const struct RfdConfig *cfg,
                      const size_t *ts,
                      size_t nt,
                      const size_t *vs,
                      size_t nv,
                      struct RfdReport **out);

/**
 * Ranking of all architectures with at most `s` groups.
 *
 * # Safety
 * `cfg` must be a live config handle and `out` a valid pointer.
 */
RfdStatus rfd_oracle(const struct RfdConfig *cfg, size_t s, struct RfdReport **out);

/**
 * Full demo run: `0` chain10, `1` network11.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
RfdStatus rfd_demo(int32_t name, uint64_t seed, struct RfdReport **out);

/**
 * # Safety
 * `report` must be null or a handle from this library that has not been freed.
 */
void rfd_report_free(struct RfdReport *report);

/**
 * Number of design rows, or 0 for a null handle.
 *
 * # Safety
 * `report` must be null or a live report handle.
 */
size_t rfd_report_row_count(const struct RfdReport *report);

/**
 * Copies row `i` into `out`.
 *
 * # Safety
 * `report` must be a live report handle and `out` a valid pointer.
 */
RfdStatus rfd_report_row(const struct RfdReport *report, size_t i, struct RfdRow *out);

/**
 * Writes up to `cap` 1-based group numbers of row `i` into `buf`; `len` receives the full count.
 *
 * # Safety
 * `report` must be a live report handle, `len` a valid pointer and `buf` valid for `cap` writes
 * (it may be null when `cap` is zero).
 */
RfdStatus rfd_report_support(const struct RfdReport *report,
                             size_t i,
                             size_t *buf,
                             size_t cap,
                             size_t *len);

/**
 * Number of certificates, or 0 for a null handle.
 *
 * # Safety
 * `report` must be null or a live report handle.
 */
size_t rfd_report_certificate_count(const struct RfdReport *report);

/**
 * Copies the headline quantities of certificate `i` into `out`.
 *
 * # Safety
 * `report` must be a live report handle and `out` a valid pointer.
 */
RfdStatus rfd_report_certificate(const struct RfdReport *report,
                                 size_t i,
                                 struct RfdCertificate *out);

/**
 * Writes up to `cap` SNRs of certificate `i` into `buf`; `len` receives the full count.
 *
 * # Safety
 * `report` must be a live report handle, `len` a valid pointer and `buf` valid for `cap` writes
 * (it may be null when `cap` is zero).
 */
RfdStatus rfd_report_certificate_snr(const struct RfdReport *report,
                                     size_t i,
                                     double *buf,
                                     size_t cap,
                                     size_t *len);

/**
 * Report as a JSON string owned by the caller (release with `rfd_string_free`), or null on failure.
 *
 * # Safety
 * `report` must be a live report handle.
 */
char *rfd_report_to_json(const struct RfdReport *report);

/**
 * # Safety
 * `s` must be null or a string returned by this library that has not been freed.
 */
void rfd_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RFD_H */
