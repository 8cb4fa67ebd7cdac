#ifndef USMAE_H
#define USMAE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Success.
 */
#define USMAE_OK 0

/**
 * A required pointer argument was null.
 */
#define USMAE_ERR_NULL -1

/**
 * Invalid argument (bad UTF-8, out-of-range value, bad spec).
 */
#define USMAE_ERR_INVALID -2

/**
 * I/O or file-format failure.
 */
#define USMAE_ERR_IO -3

/**
 * Numeric failure (non-finite values, labeling out of range).
 */
#define USMAE_ERR_NUMERIC -4

/**
 * Shape/compatibility mismatch between dataset and model.
 */
#define USMAE_ERR_COMPAT -5

/**
 * Index out of bounds.
 */
#define USMAE_ERR_RANGE -6

typedef struct UsmaeDataset UsmaeDataset;

typedef struct UsmaeModel UsmaeModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Generate a synthetic dataset with the default Table-1-style ranges.
 * On success writes a handle to `out` which must be released with
 * `usmae_dataset_free`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
int32_t usmae_dataset_generate(uint32_t count, uint64_t seed, struct UsmaeDataset **out);

/**
 * Open a US1D file.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string, `out` a valid pointer.
 */
int32_t usmae_dataset_open(const char *path, struct UsmaeDataset **out);

/**
 * # Safety
 * `ds` must be a handle from this library or null.
 */
void usmae_dataset_free(struct UsmaeDataset *ds);

/**
 * Number of records, or a negative error code.
 *
 * # Safety
 * `ds` must be a valid handle.
 */
int64_t usmae_dataset_len(const struct UsmaeDataset *ds);

/**
 * Copy the 8-bit samples of one record into `buf` (capacity `buf_len`).
 * Returns the signal length, or a negative error code.
 *
 * # Safety
 * `ds` must be a valid handle and `buf` must point to `buf_len` bytes.
 */
int64_t usmae_dataset_signal(const struct UsmaeDataset *ds,
                             uint64_t index,
                             uint8_t *buf,
                             uint64_t buf_len);

/**
 * ToF class label of one record, or a negative error code
 * (`USMAE_ERR_INVALID` when the dataset carries no labels).
 *
 * # Safety
 * `ds` must be a valid handle.
 */
int32_t usmae_dataset_label(const struct UsmaeDataset *ds, uint64_t index);

/**
 * Shannon entropy in bits of the pooled amplitude histogram.
 *
 * # Safety
 * `ds` must be a valid handle, `out` a valid pointer.
 */
int32_t usmae_dataset_entropy(const struct UsmaeDataset *ds, double *out);

/**
 * Cross-correlation ToF label of `signal` against the reference
 * `excitation` (both `len` f64 samples). Returns the class, or a negative
 * error code.
 *
 * # Safety
 * Both pointers must reference `len` f64 values.
 */
int32_t usmae_tof_label(const double *signal, const double *excitation, uint64_t len);

/**
 * Load a UMAE checkpoint. The handle must be released with
 * `usmae_model_free`.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string, `out` a valid pointer.
 */
int32_t usmae_model_load(const char *path, struct UsmaeModel **out);

/**
 * # Safety
 * `model` must be a handle from this library or null.
 */
void usmae_model_free(struct UsmaeModel *model);

/**
 * Predicted ToF class for one 8-bit signal of `len` samples, or a negative
 * error code (`USMAE_ERR_COMPAT` when `len` mismatches the model).
 *
 * # Safety
 * `model` must be a valid handle and `signal` must point to `len` bytes.
 */
int32_t usmae_model_classify(const struct UsmaeModel *model, const uint8_t *signal, uint64_t len);

/**
 * Mean dequantized amplitude helper used by binding smoke tests.
 *
 * # Safety
 * `signal` must point to `len` bytes.
 */
double usmae_dequantize_mean(const uint8_t *signal, uint64_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* USMAE_H */
