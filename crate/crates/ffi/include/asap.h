#ifndef ASAP_H
#define ASAP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum AsapMode {
  ASAP_MODE_POOL = 0,
  ASAP_MODE_PRUNE = 1,
  ASAP_MODE_HYBRID = 2,
  ASAP_MODE_REPORT_ONLY = 3,
} AsapMode;

typedef enum AsapMetric {
  ASAP_METRIC_DIFFUSION = 0,
  ASAP_METRIC_COSINE = 1,
} AsapMetric;

typedef enum AsapBudgetPolicy {
  ASAP_BUDGET_POLICY_STRICT = 0,
  ASAP_BUDGET_POLICY_LITERAL = 1,
} AsapBudgetPolicy;

// Status codes. Values match the CLI exit codes.
typedef enum AsapStatus {
  ASAP_STATUS_OK = 0,
  ASAP_STATUS_CONFIG_ERROR = 2,
  ASAP_STATUS_IO_FAILURE = 3,
  ASAP_STATUS_MAGIC_MISMATCH = 10,
  ASAP_STATUS_VERSION_UNSUPPORTED = 11,
  ASAP_STATUS_SHAPE_MISMATCH = 12,
  ASAP_STATUS_NOT_ROW_STOCHASTIC = 13,
  ASAP_STATUS_NEGATIVE_ENTRY = 14,
  ASAP_STATUS_ENTRY_OUT_OF_RANGE = 15,
  ASAP_STATUS_NON_FINITE = 16,
  ASAP_STATUS_MISSING_CLS = 17,
  ASAP_STATUS_INVALID_META = 18,
  ASAP_STATUS_LAYER_OUT_OF_RANGE = 20,
  ASAP_STATUS_ALPHA_OUT_OF_RANGE = 21,
  ASAP_STATUS_TAU_OUT_OF_RANGE = 22,
  ASAP_STATUS_EMPTY_STACK = 23,
  ASAP_STATUS_HISTORY_NOT_RETAINED = 24,
  ASAP_STATUS_SINK_IS_CLS = 30,
  ASAP_STATUS_INDEX_OUT_OF_RANGE = 31,
  ASAP_STATUS_DEGENERATE_PHI = 32,
  ASAP_STATUS_LENGTH_MISMATCH = 33,
  ASAP_STATUS_TOO_SHORT = 34,
  ASAP_STATUS_BAD_CLUSTER_COUNTS = 40,
  ASAP_STATUS_EMPTY_BACKGROUND = 41,
  ASAP_STATUS_MISSING_FEATURES = 42,
  ASAP_STATUS_TARGET_EXCEEDS_INPUT = 43,
  ASAP_STATUS_INFEASIBLE_MARGIN = 50,
  ASAP_STATUS_NULL_POINTER = 90,
  ASAP_STATUS_INVALID_UTF8 = 91,
  ASAP_STATUS_BUFFER_TOO_SMALL = 92,
  ASAP_STATUS_NO_TOKEN_SET = 93,
  ASAP_STATUS_PANIC = 99,
} AsapStatus;

// Fate of an original token in the reduced output.
typedef enum AsapFate {
  ASAP_FATE_KEEP = 0,
  ASAP_FATE_POOL = 1,
  ASAP_FATE_DROP = 2,
} AsapFate;

// Opaque pipeline result.
typedef struct AsapResult AsapResult;

// Opaque attention stack.
typedef struct AsapStack AsapStack;

// Run configuration. Start from `asap_config_default()`.
//
// Zero means "unset" for `budget`, `removal_batch` and `max_layers`.
// A negative `feature_layer` selects the trigger layer.
typedef struct AsapConfig {
  enum AsapMode mode;
  double alpha;
  double tau;
  size_t k;
  size_t p;
  size_t budget;
  size_t removal_batch;
  enum AsapMetric metric;
  enum AsapBudgetPolicy budget_policy;
  bool random_anchor;
  uint64_t anchor_seed;
  bool early_stop;
  size_t max_layers;
  int64_t feature_layer;
} AsapConfig;

typedef struct AsapSinkReport {
  size_t t_star;
  size_t sink_index;
  double trigger_value;
  bool detected;
  // Token the distances were measured from.
  size_t anchor;
} AsapSinkReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Defaults: pool mode, alpha 0.5, tau 7, K 6, p 1, sink anchor, early stop.
struct AsapConfig asap_config_default(void);

// Reads an ATNB file.
//
// # Safety
// `path` must be a nul-terminated string and `out` a writable pointer.
enum AsapStatus asap_stack_read(const char *path, struct AsapStack **out);

// Builds a stack from caller-owned buffers, which are copied.
//
// `attn` holds `layers * heads * tokens * tokens` values. `features` may be
// null (with `feature_dim` 0); otherwise it holds `layers * tokens * feature_dim`.
//
// # Safety
// Buffers must be valid for the stated lengths and `out` writable.
enum AsapStatus asap_stack_from_buffers(size_t layers,
                                        size_t heads,
                                        size_t tokens,
                                        const float *attn,
                                        size_t feature_dim,
                                        const float *features,
                                        struct AsapStack **out);

// Token count N, or 0 for a null handle.
//
// # Safety
// `stack` must be null or a live handle.
size_t asap_stack_tokens(const struct AsapStack *stack);

// Layer count L, or 0 for a null handle.
//
// # Safety
// `stack` must be null or a live handle.
size_t asap_stack_layers(const struct AsapStack *stack);

// # Safety
// `stack` must be null or a handle not yet freed.
void asap_stack_free(struct AsapStack *stack);

// Runs the pipeline. A null `config` uses the defaults.
//
// # Safety
// `stack` must be a live handle, `config` null or valid, `out` writable.
enum AsapStatus asap_run(const struct AsapStack *stack,
                         const struct AsapConfig *config,
                         struct AsapResult **out);

// # Safety
// `result` must be a live handle and `out` writable.
enum AsapStatus asap_result_sink(const struct AsapResult *result, struct AsapSinkReport *out);

// Surviving patch-token indices in output order. `out_len` always receives
// the full count, so a call with `cap = 0` sizes the buffer.
//
// # Safety
// `result` must be live; `buf` must hold `cap` values; `out_len` may be null.
enum AsapStatus asap_result_survivors(const struct AsapResult *result,
                                      size_t *buf,
                                      size_t cap,
                                      size_t *out_len);

// Per-token fate for all N original tokens.
//
// # Safety
// As for [`asap_result_survivors`].
enum AsapStatus asap_result_mask(const struct AsapResult *result,
                                 enum AsapFate *buf,
                                 size_t cap,
                                 size_t *out_len);

// Length of the reduced token list (CLS and pooled included); 0 in report-only mode.
//
// # Safety
// `result` must be null or live.
size_t asap_result_token_count(const struct AsapResult *result);

// Copies the feature vector of output token `i`. The original index is
// written to `out_index` (-1 for the pooled token).
//
// # Safety
// `result` must be live; `buf` must hold `cap` values; pointers may be null
// only where documented.
enum AsapStatus asap_result_token(const struct AsapResult *result,
                                  size_t i,
                                  int64_t *out_index,
                                  double *buf,
                                  size_t cap,
                                  size_t *out_len);

// Full JSON report. Free with [`asap_string_free`]. Null on failure.
//
// # Safety
// `result` must be live.
char *asap_result_report_json(const struct AsapResult *result);

// # Safety
// `result` must be null or a handle not yet freed.
void asap_result_free(struct AsapResult *result);

// # Safety
// `s` must be null or a string returned by this library, not yet freed.
void asap_string_free(char *s);

// Message for the last failed call on this thread, or null. Valid until the
// next call into the library from this thread.
const char *asap_last_error_message(void);

// Static name of a status code.
const char *asap_status_name(enum AsapStatus status);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ASAP_H */
