#ifndef CLAB_H
#define CLAB_H

#include <stddef.h>
#include <stdint.h>

typedef enum ClabStatus {
  CLAB_STATUS_OK = 0,
  CLAB_STATUS_NULL_POINTER = 1,
  CLAB_STATUS_INVALID_ARGUMENT = 2,
  CLAB_STATUS_SHAPE_MISMATCH = 3,
  CLAB_STATUS_NOT_UNIT_NORM = 4,
  CLAB_STATUS_INVALID_TEMPERATURE = 5,
  CLAB_STATUS_INVALID_ALPHA = 6,
  CLAB_STATUS_INVALID_LAMBDA = 7,
  CLAB_STATUS_DEGENERATE_BATCH = 8,
  CLAB_STATUS_NO_POSITIVE_PAIRS = 9,
  CLAB_STATUS_K_TOO_LARGE = 10,
  CLAB_STATUS_MISSING_LABELS = 11,
  CLAB_STATUS_CORRUPT_HEADER = 12,
  CLAB_STATUS_TRUNCATED_PAYLOAD = 13,
  CLAB_STATUS_UNSUPPORTED_VERSION = 14,
  CLAB_STATUS_IO = 15,
  CLAB_STATUS_PANIC = 16,
  CLAB_STATUS_OTHER = 17,
} ClabStatus;

typedef enum ClabVariant {
  CLAB_VARIANT_CONTRASTIVE = 0,
  CLAB_VARIANT_SIMPLE = 1,
  CLAB_VARIANT_HARD = 2,
  CLAB_VARIANT_HARD_SIMPLE = 3,
  CLAB_VARIANT_TRIPLET_LIMIT = 4,
  CLAB_VARIANT_TAYLOR_LIMIT = 5,
} ClabVariant;

typedef enum ClabToleranceForm {
  CLAB_TOLERANCE_FORM_SAME_CLASS_MEAN = 0,
  CLAB_TOLERANCE_FORM_MASKED_MEAN_ALL_PAIRS = 1,
} ClabToleranceForm;

/**
 * Opaque embedding dump.
 */
typedef struct ClabDump ClabDump;

/**
 * Opaque square similarity matrix.
 */
typedef struct ClabSimilarity ClabSimilarity;

/**
 * Loss selection. A negative `lambda` picks the balanced default.
 */
typedef struct ClabLossConfig {
  enum ClabVariant variant;
  double tau;
  double alpha;
  double lambda;
} ClabLossConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. Valid until the next
 * failing call on the same thread.
 */
const char *clab_last_error_message(void);

void clab_clear_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *clab_version(void);

/**
 * Wraps an `n × n` row-major array whose entries lie in [-1, 1].
 *
 * # Safety
 * `values` must point to `n * n` doubles and `out` must be writable.
 */
enum ClabStatus clab_similarity_new(const double *values, size_t n, struct ClabSimilarity **out);

/**
 * Similarities `anchors · keysᵀ` of two `n × d` batches of unit rows.
 *
 * # Safety
 * `anchors` and `keys` must point to `n * d` doubles and `out` must be writable.
 */
enum ClabStatus clab_similarity_from_features(const double *anchors,
                                              const double *keys,
                                              size_t n,
                                              size_t d,
                                              struct ClabSimilarity **out);

/**
 * # Safety
 * `s` must be null or a handle from this library that was not freed yet.
 */
void clab_similarity_free(struct ClabSimilarity *s);

/**
 * Side length of a similarity handle, 0 for null.
 *
 * # Safety
 * `s` must be null or a live handle.
 */
size_t clab_similarity_size(const struct ClabSimilarity *s);

/**
 * Per-anchor losses (optional, `n` entries) and their mean.
 *
 * # Safety
 * `s` and `config` must be valid; `per_anchor` is null or holds `n` doubles;
 * `mean` is null or writable.
 */
enum ClabStatus clab_loss(const struct ClabSimilarity *s,
                          const struct ClabLossConfig *config,
                          double *per_anchor,
                          double *mean);

/**
 * `∂L_i/∂s_ij` as an `n × n` row-major array.
 *
 * # Safety
 * `s` and `config` must be valid and `out` must hold `n * n` doubles.
 */
enum ClabStatus clab_loss_gradients(const struct ClabSimilarity *s,
                                    const struct ClabLossConfig *config,
                                    double *out);

/**
 * Share of the negative gradient per negative (optional, `m` entries) and its entropy.
 *
 * # Safety
 * `negatives` must hold `m` doubles; `r` is null or holds `m` doubles;
 * `entropy` is null or writable.
 */
enum ClabStatus clab_penalty_distribution(const double *negatives,
                                          size_t m,
                                          double tau,
                                          double *r,
                                          double *entropy);

/**
 * Uniformity over all pairs of an `n × d` batch.
 *
 * # Safety
 * `features` must hold `n * d` doubles and `out` must be writable.
 */
enum ClabStatus clab_uniformity(const double *features, size_t n, size_t d, double t, double *out);

/**
 * # Safety
 * `features` must hold `n * d` doubles, `labels` `n` entries; `out` must be writable.
 */
enum ClabStatus clab_tolerance(const double *features,
                               const uint32_t *labels,
                               size_t n,
                               size_t d,
                               enum ClabToleranceForm form,
                               double *out);

/**
 * # Safety
 * `features` must hold `n * d` doubles, `labels` `n` entries; `out` must be writable.
 */
enum ClabStatus clab_knn_purity(const double *features,
                                const uint32_t *labels,
                                size_t n,
                                size_t d,
                                size_t k,
                                double *out);

/**
 * Writes an `n × d` dump; `labels` may be null.
 *
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string, `features` must hold `n * d`
 * doubles and `labels` is null or holds `n` entries.
 */
enum ClabStatus clab_dump_write(const char *path,
                                const double *features,
                                const uint32_t *labels,
                                size_t n,
                                size_t d);

/**
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string and `out` must be writable.
 */
enum ClabStatus clab_dump_read(const char *path, struct ClabDump **out);

/**
 * # Safety
 * `dump` must be null or a live handle.
 */
size_t clab_dump_rows(const struct ClabDump *dump);

/**
 * # Safety
 * `dump` must be null or a live handle.
 */
size_t clab_dump_cols(const struct ClabDump *dump);

/**
 * Row-major embeddings owned by the handle, or null.
 *
 * # Safety
 * `dump` must be null or a live handle; the pointer dies with it.
 */
const double *clab_dump_embeddings(const struct ClabDump *dump);

/**
 * Labels owned by the handle, or null when the dump has none.
 *
 * # Safety
 * `dump` must be null or a live handle; the pointer dies with it.
 */
const uint32_t *clab_dump_labels(const struct ClabDump *dump);

/**
 * # Safety
 * `dump` must be null or a handle from this library that was not freed yet.
 */
void clab_dump_free(struct ClabDump *dump);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CLAB_H */
