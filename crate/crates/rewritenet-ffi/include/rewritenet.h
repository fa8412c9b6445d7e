#ifndef REWRITENET_H
#define REWRITENET_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code for every fallible entry point.
 */
typedef enum RnStatus {
  /**
   * Call succeeded.
   */
  RnOk = 0,
  /**
   * A required pointer argument was null.
   */
  RnNullPointer = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  RnInvalidUtf8 = 2,
  /**
   * An argument value was rejected.
   */
  RnInvalidArgument = 3,
  /**
   * A file could not be read or written.
   */
  RnIo = 4,
  /**
   * The output buffer is too small; see `rn_model_max_output_len`.
   */
  RnBufferTooSmall = 5,
  /**
   * Any other runtime failure.
   */
  RnRuntime = 6,
} RnStatus;

/**
 * Opaque model handle.
 */
typedef struct RnModel RnModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Returns the message for the most recent failure on this thread.
 *
 * The pointer stays valid until the next failing call on the same thread.
 * Never returns null.
 */
const char *rn_last_error_message(void);

/**
 * Loads a saved model from a checkpoint directory.
 *
 * On success writes a handle into `out`; release it with `rn_model_free`.
 *
 * # Safety
 * `dir` must be a valid C string and `out` a valid pointer.
 */
enum RnStatus rn_model_load(const char *dir, struct RnModel **out);

/**
 * Releases a model handle. Passing null is a no-op.
 *
 * # Safety
 * `model` must be null or a handle returned by `rn_model_load` that has
 * not been freed yet.
 */
void rn_model_free(struct RnModel *model);

/**
 * Largest number of token ids `rn_model_predict` can write.
 *
 * Returns 0 if `model` is null.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
uintptr_t rn_model_max_output_len(const struct RnModel *model);

/**
 * Number of tokens in the model vocabulary; ids below this are valid inputs.
 *
 * Returns 0 if `model` is null.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
uintptr_t rn_model_vocab_size(const struct RnModel *model);

/**
 * Runs greedy decoding on one token-id sequence.
 *
 * Writes at most `out_cap` ids into `out` and the count into `out_len`.
 * Padding and end markers are already stripped from the result. Fails
 * with `RnBufferTooSmall` when `out_cap` is less than the prediction
 * length; `rn_model_max_output_len` is always a sufficient capacity.
 *
 * # Safety
 * `model` must be a live handle, `input` must point to `input_len` ids,
 * `out` must point to `out_cap` writable ids, `out_len` must be valid.
 */
enum RnStatus rn_model_predict(const struct RnModel *model,
                               const uint32_t *input,
                               uintptr_t input_len,
                               uint32_t *out,
                               uintptr_t out_cap,
                               uintptr_t *out_len);

/**
 * Analytic forward-pass cost of one model family, in GFLOPs.
 *
 * `kind` is "rewritenet", "transformer", or "lstm". Dimensions not listed
 * here keep their library defaults.
 *
 * # Safety
 * `kind` must be a valid C string and `out_gflops` a valid pointer.
 */
enum RnStatus rn_flops_estimate(const char *kind,
                                uintptr_t batch,
                                uintptr_t n,
                                uintptr_t d,
                                uintptr_t rules,
                                uintptr_t lp,
                                uintptr_t lq,
                                uintptr_t layers,
                                double *out_gflops);

/**
 * Exhaustively checks a transducer file against its compiled rule banks.
 *
 * Writes true into `out_pass` when every input of length at most
 * `max_len` transduces identically.
 *
 * # Safety
 * `path` must be a valid C string and `out_pass` a valid pointer.
 */
enum RnStatus rn_fst_check(const char *path, uintptr_t max_len, bool *out_pass);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* REWRITENET_H */
