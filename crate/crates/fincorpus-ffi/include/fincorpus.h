#ifndef FINCORPUS_H
#define FINCORPUS_H

/* Generated by cbindgen from fincorpus-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum FcStatus {
  FcStatus_Ok = 0,
  /**
   * A required pointer argument was null.
   */
  FcStatus_NullArgument = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  FcStatus_InvalidUtf8 = 2,
  /**
   * An argument value was out of range.
   */
  FcStatus_InvalidArgument = 3,
  /**
   * The computation itself reported an error.
   */
  FcStatus_ComputeError = 4,
  /**
   * File or path access failed.
   */
  FcStatus_IoError = 5,
  /**
   * An internal invariant broke; state is still consistent.
   */
  FcStatus_Panic = 6,
} FcStatus;

/**
 * Three-way sentiment, numbered in confusion-matrix axis order.
 */
typedef enum FcSentiment {
  FcSentiment_Negative = 0,
  FcSentiment_Neutral = 1,
  FcSentiment_Positive = 2,
} FcSentiment;

/**
 * A loaded n-gram scoring model.
 */
typedef struct FcLm FcLm;

/**
 * Accumulates gold/predicted label pairs for metric reports.
 */
typedef struct FcMetrics FcMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null if the
 * thread has not failed yet. The pointer is invalidated by the next
 * failing call on the same thread; do not free it.
 */
const char *fc_last_error(void);

/**
 * Releases a string produced by this library. Null is a no-op.
 *
 * # Safety
 * `s` must be null or a pointer previously returned by this library and
 * not yet freed; freeing twice or freeing foreign memory is undefined.
 */
void fc_string_free(char *s);

/**
 * Library version as a static string; do not free.
 */
const char *fc_version(void);

/**
 * Labels a forward return (in percent) against a symmetric neutral band:
 * strictly above `threshold_pct` is positive, strictly below its
 * negation is negative, the band itself (boundaries included) is
 * neutral.
 *
 * # Safety
 * `out` must be null or point to writable memory for one `FcSentiment`.
 */
enum FcStatus fc_label_from_return(double return_pct, double threshold_pct, enum FcSentiment *out);

/**
 * Cleans one document text with the default cleaning configuration.
 * The output reaches a fixed point: cleaning it again changes nothing.
 *
 * # Safety
 * `text` must be null or a nul-terminated string; `out` receives an
 * owned string for [`fc_string_free`].
 */
enum FcStatus fc_clean_text(const char *text, char **out);

/**
 * GPU-hour and dollar cost of a training run priced from an instance
 * rate. When `exact_rate` is false the per-GPU rate is rounded half-up
 * to whole cents before multiplying, matching published cost tables.
 *
 * # Safety
 * The out pointers must be null or point to writable `double` slots.
 */
enum FcStatus fc_training_cost(uint64_t gpu_count,
                               double hours,
                               double instance_hourly_usd,
                               uint32_t gpus_per_instance,
                               bool exact_rate,
                               double *out_gpu_hours,
                               double *out_cost_usd);

/**
 * Creates an empty metrics accumulator; release with [`fc_metrics_free`].
 */
struct FcMetrics *fc_metrics_new(void);

/**
 * Records one prediction. `gold` and `pred` use the [`FcSentiment`]
 * numbering.
 *
 * # Safety
 * `metrics` must be a live pointer from [`fc_metrics_new`].
 */
enum FcStatus fc_metrics_add(struct FcMetrics *metrics, int gold, int pred);

/**
 * Renders the accumulated pairs as a JSON metrics report (accuracy,
 * per-mode F1, confusion counts). Fails on an empty accumulator.
 *
 * # Safety
 * `metrics` must be a live pointer from [`fc_metrics_new`]; `out`
 * receives an owned string for [`fc_string_free`].
 */
enum FcStatus fc_metrics_report_json(const struct FcMetrics *metrics, char **out);

/**
 * Releases a metrics accumulator. Null is a no-op.
 *
 * # Safety
 * `metrics` must be null or a pointer from [`fc_metrics_new`] not yet
 * freed.
 */
void fc_metrics_free(struct FcMetrics *metrics);

/**
 * Loads a model saved by the toolkit; release with [`fc_lm_free`].
 *
 * # Safety
 * `path` must be null or a nul-terminated string; `out` must be a valid
 * pointer slot.
 */
enum FcStatus fc_lm_load(const char *path, struct FcLm **out);

/**
 * Perplexity of a text under a loaded model.
 *
 * # Safety
 * `lm` must be a live pointer from [`fc_lm_load`]; `text` a
 * nul-terminated string; `out` a valid slot.
 */
enum FcStatus fc_lm_perplexity(const struct FcLm *lm, const char *text, double *out);

/**
 * Releases a loaded model. Null is a no-op.
 *
 * # Safety
 * `lm` must be null or a pointer from [`fc_lm_load`] not yet freed.
 */
void fc_lm_free(struct FcLm *lm);

/**
 * Runs a pipeline config end to end and returns the run manifest as
 * JSON. `workers` zero means one worker per core.
 *
 * # Safety
 * `config_path` must be a nul-terminated string; `out_manifest_json`
 * receives an owned string for [`fc_string_free`].
 */
enum FcStatus fc_pipeline_run(const char *config_path, uint32_t workers, char **out_manifest_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FINCORPUS_H */
