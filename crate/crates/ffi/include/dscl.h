/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef DSCL_H
#define DSCL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DsclDenominator {
  DsclDenominator_ExcludeAnchorOnly = 0,
  DsclDenominator_StrictIndicator = 1,
} DsclDenominator;

typedef enum DsclSource {
  DsclSource_SpkEmb = 0,
  DsclSource_AvgConEmb = 1,
} DsclSource;

typedef enum DsclStatus {
  DsclStatus_Ok = 0,
  DsclStatus_Validation = 1,
  DsclStatus_Numerical = 2,
  DsclStatus_Io = 3,
  DsclStatus_NullPointer = 4,
  DsclStatus_BufferTooSmall = 5,
  DsclStatus_Panic = 6,
} DsclStatus;

/**
 * Opaque model handle.
 */
typedef struct DsclModel DsclModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread ("" after a success).
 * Valid until the next call on the same thread.
 */
const char *dscl_last_error(void);

/**
 * Load a checkpoint into a new model handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum DsclStatus dscl_model_load(const char *path, struct DsclModel **out);

/**
 * A freshly initialized model from a named preset (`paper`, `tiny`, `test`).
 *
 * # Safety
 * `preset` must be a NUL-terminated string; `out` must be writable.
 */
enum DsclStatus dscl_model_new(const char *preset, uint64_t seed, struct DsclModel **out);

/**
 * Release a model handle. Null is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void dscl_model_free(struct DsclModel *model);

/**
 * Input feature dimension and embedding size for `source`.
 *
 * # Safety
 * `model` must be a live handle; `feat_dim` and `emb_dim` must be writable.
 */
enum DsclStatus dscl_model_dims(const struct DsclModel *model,
                                enum DsclSource source,
                                uintptr_t *feat_dim,
                                uintptr_t *emb_dim);

/**
 * Embed one utterance. Mean normalization is applied here.
 *
 * # Safety
 * `feats` must hold `num_frames * feat_dim` values; `out` must hold `out_cap`.
 */
enum DsclStatus dscl_model_embed(const struct DsclModel *model,
                                 const double *feats,
                                 uintptr_t num_frames,
                                 uintptr_t feat_dim,
                                 enum DsclSource source,
                                 double *out,
                                 uintptr_t out_cap);

/**
 * Log mel filter-bank features (25 ms window, 10 ms shift), no
 * normalization. `out` receives `*num_frames * n_mels` values.
 *
 * # Safety
 * `samples` must hold `n` values; `out` must hold `out_cap`; `num_frames`
 * must be writable.
 */
enum DsclStatus dscl_fbank(const double *samples,
                           uintptr_t n,
                           uint32_t sample_rate,
                           uintptr_t n_mels,
                           double *out,
                           uintptr_t out_cap,
                           uintptr_t *num_frames);

/**
 * Equal error rate of labeled scores (`labels[i] != 0` marks a target).
 *
 * # Safety
 * `scores` and `labels` must hold `n` values; `out` must be writable.
 */
enum DsclStatus dscl_eer(const double *scores, const uint8_t *labels, uintptr_t n, double *out);

/**
 * Normalized minimum detection cost of labeled scores.
 *
 * # Safety
 * `scores` and `labels` must hold `n` values; `out` must be writable.
 */
enum DsclStatus dscl_min_dcf(const double *scores,
                             const uint8_t *labels,
                             uintptr_t n,
                             double p_target,
                             double c_miss,
                             double c_fa,
                             double *out);

/**
 * Contrastive loss of `two_n` embeddings laid out view-major: rows
 * `0..N` are first views, row `i + N` is the positive of row `i`.
 *
 * # Safety
 * `embeddings` must hold `two_n * dim` values; `out` must be writable.
 */
enum DsclStatus dscl_nt_xent(const double *embeddings,
                             uintptr_t two_n,
                             uintptr_t dim,
                             double tau,
                             enum DsclDenominator rule,
                             double *out);

/**
 * Null-safe convenience for callers that want to clear a handle slot.
 *
 * # Safety
 * `slot` must be writable; its handle must come from this library.
 */
void dscl_model_release(struct DsclModel **slot);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* DSCL_H */
