#ifndef ACELAB_H
#define ACELAB_H

/* Generated by cbindgen from crates/ffi/src. Do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every entry point.
 */
typedef enum AcelabStatus {
  ACELAB_STATUS_OK = 0,
  ACELAB_STATUS_NULL_POINTER = 1,
  ACELAB_STATUS_INVALID_ARGUMENT = 2,
  ACELAB_STATUS_INDEX_OUT_OF_RANGE = 3,
  ACELAB_STATUS_DEGENERATE = 4,
  ACELAB_STATUS_IO = 5,
  ACELAB_STATUS_FORMAT = 6,
  ACELAB_STATUS_ENUMERATION_CAP = 7,
  ACELAB_STATUS_BUFFER_TOO_SMALL = 8,
  ACELAB_STATUS_PANIC = 9,
} AcelabStatus;

/**
 * Values accepted by the `modulation` parameters.
 */
typedef enum AcelabModulation {
  ACELAB_MODULATION_SOFTPLUS = 0,
  ACELAB_MODULATION_RELU = 1,
} AcelabModulation;

/**
 * Opaque tabular policy.
 */
typedef struct AcelabPolicy AcelabPolicy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null after a
 * success. Valid until the next call into the library on this thread.
 */
const char *acelab_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *acelab_version(void);

/**
 * Creates a policy with all-zero logits.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum AcelabStatus acelab_policy_new_uniform(size_t vocab_size,
                                            size_t max_len,
                                            size_t num_classes,
                                            struct AcelabPolicy **out);

/**
 * Creates a policy with logits drawn i.i.d. from N(0, scale²).
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum AcelabStatus acelab_policy_new_random(size_t vocab_size,
                                           size_t max_len,
                                           size_t num_classes,
                                           double scale,
                                           uint64_t seed,
                                           struct AcelabPolicy **out);

/**
 * Creates a policy from `len` logits in row-major (class, position, previous token, token) order.
 *
 * # Safety
 * `logits` must point to `len` readable doubles; `out` must be writable.
 */
enum AcelabStatus acelab_policy_from_logits(size_t vocab_size,
                                            size_t max_len,
                                            size_t num_classes,
                                            const double *logits,
                                            size_t len,
                                            struct AcelabPolicy **out);

/**
 * Releases a policy. Null is ignored.
 *
 * # Safety
 * `policy` must be null or a handle returned by this library and not yet freed.
 */
void acelab_policy_free(struct AcelabPolicy *policy);

/**
 * Loads a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum AcelabStatus acelab_policy_load(const char *path, struct AcelabPolicy **out);

/**
 * Writes a checkpoint file.
 *
 * # Safety
 * `policy` must be a live handle; `path` a NUL-terminated string.
 */
enum AcelabStatus acelab_policy_save(const struct AcelabPolicy *policy, const char *path);

/**
 * Reports the vocabulary size, maximum length and number of prompt classes.
 *
 * # Safety
 * `policy` must be a live handle; the out-pointers must be writable.
 */
enum AcelabStatus acelab_policy_shape(const struct AcelabPolicy *policy,
                                      size_t *vocab_size,
                                      size_t *max_len,
                                      size_t *num_classes);

/**
 * Copies the logits into `buf`. `*len_out` receives the required length,
 * and `BUFFER_TOO_SMALL` is returned if `capacity` is less than that.
 *
 * # Safety
 * `buf` must point to `capacity` writable doubles (may be null when `capacity` is 0).
 */
enum AcelabStatus acelab_policy_logits(const struct AcelabPolicy *policy,
                                       double *buf,
                                       size_t capacity,
                                       size_t *len_out);

/**
 * `log π(tokens | class)`.
 *
 * # Safety
 * `tokens` must point to `len` readable values; `out` must be writable.
 */
enum AcelabStatus acelab_policy_sequence_logprob(const struct AcelabPolicy *policy,
                                                 size_t class_,
                                                 const uint32_t *tokens,
                                                 size_t len,
                                                 double *out);

/**
 * Probability that a sampled answer satisfies `(Σ tokens) mod modulus == target`,
 * by exhaustive enumeration over answers of `length` tokens.
 *
 * # Safety
 * `policy` must be a live handle; `out` must be writable.
 */
enum AcelabStatus acelab_policy_exact_pass_rate(const struct AcelabPolicy *policy,
                                                size_t modulus,
                                                size_t target,
                                                size_t length,
                                                size_t class_,
                                                double *out);

/**
 * Confidence modulation `softplus(c)` or `max(c, 0)`.
 *
 * # Safety
 * `out` must be writable.
 */
enum AcelabStatus acelab_modulate(double confidence, uint32_t modulation_kind, double *out);

/**
 * Group-normalized advantages `(r − mean) / (std + 1e-8)`.
 *
 * # Safety
 * `rewards` and `out` must each point to `n` doubles.
 */
enum AcelabStatus acelab_grpo_advantages(const double *rewards, size_t n, double *out);

/**
 * Confidence-scaled advantages: group-normalized, then each zero-reward entry
 * multiplied by `1 + alpha · modulation(confidence)`.
 *
 * # Safety
 * `rewards`, `confidence` and `out` must each point to `n` doubles.
 */
enum AcelabStatus acelab_ace_advantages(const double *rewards,
                                        const double *confidence,
                                        size_t n,
                                        double alpha,
                                        uint32_t modulation_kind,
                                        double *out);

/**
 * Unbiased pass@k from `c` correct answers out of `n`.
 *
 * # Safety
 * `out` must be writable.
 */
enum AcelabStatus acelab_pass_at_k(size_t n, size_t c, size_t k, double *out);

/**
 * Verifies an answer to a mod_sum task; `*reward` is 1 if correct, else 0.
 *
 * # Safety
 * `tokens` must point to `len` readable values; `reward` must be writable.
 */
enum AcelabStatus acelab_mod_sum_verify(size_t modulus,
                                        size_t target,
                                        size_t vocab_size,
                                        const uint32_t *tokens,
                                        size_t len,
                                        uint8_t *reward);

/**
 * Exact check of the selective-regularizer decomposition for one mod_sum
 * prompt. Writes the max-norm identity defect and the regularizer value.
 *
 * # Safety
 * `policy` and `reference` must be live handles; the out-pointers must be writable.
 */
enum AcelabStatus acelab_verify_decomposition(const struct AcelabPolicy *policy,
                                              const struct AcelabPolicy *reference,
                                              size_t modulus,
                                              size_t target,
                                              size_t length,
                                              size_t class_,
                                              double alpha,
                                              double *identity_defect,
                                              double *regularizer_value);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ACELAB_H */
