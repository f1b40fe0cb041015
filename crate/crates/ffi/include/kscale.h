#ifndef KSCALE_H
#define KSCALE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum KsFrameType {
  KS_FRAME_TYPE_I = 0,
  KS_FRAME_TYPE_P = 1,
  KS_FRAME_TYPE_B = 2,
} KsFrameType;

typedef enum KsMetric {
  KS_METRIC_PSNR = 0,
  KS_METRIC_SSIM = 1,
} KsMetric;

typedef enum KsStatus {
  KS_STATUS_OK = 0,
  KS_STATUS_NULL_POINTER = 1,
  KS_STATUS_INVALID_ARGUMENT = 2,
  KS_STATUS_TOO_FEW_POINTS = 3,
  KS_STATUS_SINGULAR_FIT = 4,
  KS_STATUS_NO_OVERLAP = 5,
  KS_STATUS_NO_CURVES = 6,
  KS_STATUS_OUT_OF_RANGE = 7,
  KS_STATUS_PANIC = 8,
  KS_STATUS_INTERNAL = 9,
} KsStatus;

typedef struct KsEnvelope KsEnvelope;

/**
 * Accumulates sampled curves for one metric.
 */
typedef struct KsEnvelopeBuilder KsEnvelopeBuilder;

typedef struct KsBdRate {
  /**
   * Negative means the test curve saves bitrate.
   */
  double percent;
  double avg_log_diff;
  double overlap_lo;
  double overlap_hi;
} KsBdRate;

typedef double (*KsObjective)(double k, void *user_data);

typedef struct KsMinimizeResult {
  double k_best;
  double f_best;
  size_t evaluations;
  bool converged;
} KsMinimizeResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf`, NUL terminated
 * and truncated to `len` bytes. Returns the full message length, or 0 when
 * there is none.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t ks_last_error_message(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ks_version(void);

/**
 * The encoder's default Lagrangian multiplier for a frame type and QP.
 *
 * # Safety
 * `out` must be null or valid for a write.
 */
enum KsStatus ks_default_lambda(enum KsFrameType frame_type, int32_t qp, double *out);

/**
 * Closed-form BD-Rate of the test curve against the reference.
 *
 * # Safety
 * Each rate/distortion pair of pointers must reference `len` readable
 * doubles; `out` must be valid for a write.
 */
enum KsStatus ks_bd_rate(const double *ref_rates,
                         const double *ref_distortions,
                         size_t ref_len,
                         const double *test_rates,
                         const double *test_distortions,
                         size_t test_len,
                         enum KsMetric metric,
                         struct KsBdRate *out);

/**
 * Bounded Brent minimization of `objective` over `[lo, hi]`. Probes are
 * rounded to three decimals and never repeated.
 *
 * # Safety
 * `objective` is called with `user_data` from this thread only; `out` must
 * be valid for a write.
 */
enum KsStatus ks_minimize(KsObjective objective,
                          void *user_data,
                          double lo,
                          double hi,
                          double xtol,
                          size_t max_evals,
                          struct KsMinimizeResult *out);

struct KsEnvelopeBuilder *ks_envelope_builder_new(enum KsMetric metric);

/**
 * # Safety
 * `builder` must come from [`ks_envelope_builder_new`] and not be freed.
 */
void ks_envelope_builder_free(struct KsEnvelopeBuilder *builder);

/**
 * Fits one RD curve measured at scale `k` and samples it at 1 kbps.
 *
 * # Safety
 * `builder` must be live; `rates` and `distortions` must reference `len`
 * readable doubles.
 */
enum KsStatus ks_envelope_builder_add_curve(struct KsEnvelopeBuilder *builder,
                                            double k,
                                            const double *rates,
                                            const double *distortions,
                                            size_t len);

/**
 * Builds the per-rate maximum over every curve added so far. The builder
 * stays usable.
 *
 * # Safety
 * `builder` must be live; `out` must be valid for a write.
 */
enum KsStatus ks_envelope_build(const struct KsEnvelopeBuilder *builder, struct KsEnvelope **out);

/**
 * # Safety
 * `envelope` must come from [`ks_envelope_build`] and not be freed.
 */
void ks_envelope_free(struct KsEnvelope *envelope);

/**
 * Number of 1 kbps grid points; 0 for a null handle.
 *
 * # Safety
 * `envelope` must be null or live.
 */
size_t ks_envelope_len(const struct KsEnvelope *envelope);

/**
 * Grid point `index`: rate in kbps, best distortion and the k that
 * achieved it. Any output pointer may be null.
 *
 * # Safety
 * `envelope` must be live; non-null outputs must be valid for a write.
 */
enum KsStatus ks_envelope_get(const struct KsEnvelope *envelope,
                              size_t index,
                              uint32_t *rate,
                              double *distortion,
                              double *k);

/**
 * Sampled BD-Rate of one envelope against another.
 *
 * # Safety
 * Both handles must be live; `out` must be valid for a write.
 */
enum KsStatus ks_envelope_bd_rate(const struct KsEnvelope *reference,
                                  const struct KsEnvelope *test,
                                  struct KsBdRate *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KSCALE_H */
