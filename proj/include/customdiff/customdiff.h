/* SPDX-License-Identifier: Apache-2.0 */
#ifndef CUSTOMDIFF_H
#define CUSTOMDIFF_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define CDIFF_API __declspec(dllexport)
#else
#define CDIFF_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum cdiff_status {
  CDIFF_OK = 0,
  CDIFF_INVALID_INPUT = 1,
  CDIFF_SINGULAR_MATRIX = 2,
  CDIFF_NUMERICAL_FAILURE = 3,
  CDIFF_UNKNOWN_TOKEN = 4,
  CDIFF_NO_RARE_TOKEN = 5,
  CDIFF_EMPTY_REGULARIZATION_SET = 6,
  CDIFF_DIVERGENCE = 7,
  CDIFF_DEGENERATE_REGULARIZATION = 8,
  CDIFF_SINGULAR_TARGET_SYSTEM = 9,
  CDIFF_CORRUPT_CHECKPOINT = 10,
  CDIFF_IO = 11,
  CDIFF_USAGE = 12,
  CDIFF_INTERNAL = 99
} cdiff_status;

/* Opaque text-to-image model (base, merged, or base with deltas applied). */
typedef struct cdiff_model cdiff_model;

CDIFF_API const char* cdiff_version(void);

/* Message of the last failure on the calling thread; "" after success. */
CDIFF_API const char* cdiff_last_error(void);

/* Name of a status value, e.g. "corrupt_checkpoint". */
CDIFF_API const char* cdiff_status_name(cdiff_status status);

/* Runs a subcommand. `options_json` is a JSON object whose keys are the
   long flag names. On success *summary (if non-null) receives a malloc'd
   string the caller releases with cdiff_string_free. */
CDIFF_API cdiff_status cdiff_command(const char* name, const char* options_json, char** summary);
CDIFF_API void cdiff_string_free(char* s);

CDIFF_API cdiff_status cdiff_model_load(const char* path, cdiff_model** out);
CDIFF_API void cdiff_model_free(cdiff_model* model);
CDIFF_API cdiff_status cdiff_model_apply_delta(cdiff_model* model, const char* delta_path);
CDIFF_API cdiff_status cdiff_model_image_size(const cdiff_model* model, size_t* size);

/* Writes image_size^2 pixels in [-1, 1], row-major, into `pixels`. */
CDIFF_API cdiff_status cdiff_model_sample(const cdiff_model* model, const char* prompt, size_t steps,
                                          double scale, uint64_t seed, double* pixels, size_t capacity);

#ifdef __cplusplus
}
#endif

#endif
