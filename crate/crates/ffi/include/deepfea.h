#ifndef DEEPFEA_H
#define DEEPFEA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DfStatus {
  DF_STATUS_OK = 0,
  DF_STATUS_NULL_POINTER = 1,
  DF_STATUS_INVALID_ARGUMENT = 2,
  DF_STATUS_INVALID_TOPOLOGY = 3,
  DF_STATUS_INVALID_LOAD = 4,
  DF_STATUS_SIMULATION = 5,
  DF_STATUS_CORRUPT_DATA = 6,
  DF_STATUS_IO = 7,
  /**
   * Buffer too small; the required length was written back.
   */
  DF_STATUS_BUFFER_TOO_SMALL = 8,
  DF_STATUS_INTERNAL = 9,
  DF_STATUS_PANIC = 10,
} DfStatus;

typedef enum DfField {
  /**
   * Node displacements, all x then all y.
   */
  DF_FIELD_DISPLACEMENT = 0,
  /**
   * Current node coordinates, all x then all y.
   */
  DF_FIELD_COORDINATES = 1,
  /**
   * Element effective stress, Pa.
   */
  DF_FIELD_STRESS = 2,
  /**
   * Element effective strain.
   */
  DF_FIELD_STRAIN = 3,
} DfField;

/**
 * Opaque simulation result (oracle or surrogate).
 */
typedef struct DfRecord DfRecord;

/**
 * Opaque trained surrogate.
 */
typedef struct DfSurrogate DfSurrogate;

/**
 * One load case on a regular 2D grid with the bottom row fixed.
 */
typedef struct DfCase {
  size_t nodes_x;
  size_t nodes_y;
  double spacing;
  double young_modulus;
  double poisson_ratio;
  double density;
  double thickness;
  size_t load_node;
  double angle_deg;
  double max_magnitude;
  /**
   * Recorded frames after the initial one.
   */
  size_t steps;
  double duration;
} DfCase;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * Valid until the next call on the same thread.
 */
const char *df_last_error_message(void);

/**
 * Fills `out` with the default 9×9 desk case (1 MN at 45° on the top-left node).
 *
 * # Safety
 * `out` must be null or point to writable memory for one `DfCase`.
 */
enum DfStatus df_case_default(struct DfCase *out);

/**
 * Runs the FE oracle.
 *
 * # Safety
 * `case` must be null or valid; `out` must be null or writable.
 */
enum DfStatus df_oracle_run(const struct DfCase *case_, struct DfRecord **out);

/**
 * Loads a model archive directory (`model.json` + `model.bin`).
 *
 * # Safety
 * `dir` must be null or a NUL-terminated string; `out` must be null or writable.
 */
enum DfStatus df_surrogate_load(const char *dir, struct DfSurrogate **out);

/**
 * Autoregressive rollout of `case` from rest.
 *
 * # Safety
 * Pointers must be null or valid; `out` must be null or writable.
 */
enum DfStatus df_surrogate_predict(const struct DfSurrogate *surrogate,
                                   const struct DfCase *case_,
                                   struct DfRecord **out);

/**
 * # Safety
 * `s` must be null or a handle from `df_surrogate_load`, not yet freed.
 */
void df_surrogate_free(struct DfSurrogate *s);

/**
 * # Safety
 * `r` must be null or a record handle not yet freed.
 */
void df_record_free(struct DfRecord *r);

/**
 * Frame count `T + 1`, node count and element count.
 *
 * # Safety
 * `r` must be null or valid; each output must be null or writable.
 */
enum DfStatus df_record_sizes(const struct DfRecord *r,
                              size_t *frames,
                              size_t *nodes,
                              size_t *elements);

/**
 * Copies one field of one frame into `buf`. `len` holds the buffer
 * capacity on input and the field length on output.
 *
 * # Safety
 * `r` must be null or valid; `buf` must hold `*len` doubles.
 */
enum DfStatus df_record_copy(const struct DfRecord *r,
                             size_t frame,
                             enum DfField field,
                             double *buf,
                             size_t *len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DEEPFEA_H */
