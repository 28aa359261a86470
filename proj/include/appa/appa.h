/* Copyright 2026 The Appa Toy Authors
 * SPDX-License-Identifier: Apache-2.0
 *
 * C interface to the appa toy library. All objects are opaque handles owned
 * by the caller and released with the matching *_free function. Every
 * fallible call returns an appa_status; the message of the most recent
 * failure on the calling thread is available from appa_last_error().
 */
#ifndef APPA_APPA_H
#define APPA_APPA_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(APPA_BUILDING)
#    define APPA_API __declspec(dllexport)
#  else
#    define APPA_API __declspec(dllimport)
#  endif
#elif defined(__GNUC__)
#  define APPA_API __attribute__((visibility("default")))
#else
#  define APPA_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum appa_status {
  APPA_OK = 0,
  APPA_ERROR = 1,            /* unexpected failure */
  APPA_CONFIG = 2,           /* invalid configuration */
  APPA_NUMERICAL = 3,        /* NaN, divergence, failed solve */
  APPA_IO = 4,               /* missing file, unwritable directory */
  APPA_SHAPE = 5,            /* tensor shapes disagree */
  APPA_FORMAT = 6,           /* malformed, truncated or foreign container file */
  APPA_INVALID_ARGUMENT = 7  /* bad argument to an API call */
} appa_status;

typedef struct appa_config appa_config;
typedef struct appa_ensemble appa_ensemble;

/* Receives each file a command wrote. */
typedef void (*appa_output_fn)(const char* path, void* user);

APPA_API const char* appa_version(void);
APPA_API const char* appa_status_name(appa_status status);
/* Empty string when nothing failed yet. Valid until the next call on this
 * thread. */
APPA_API const char* appa_last_error(void);

/* Thread count: `requested` if positive, else APPA_TOY_THREADS, else 1. */
APPA_API size_t appa_resolve_threads(int requested);

/* ---- configuration ---- */

APPA_API appa_status appa_config_parse(const char* json, appa_config** out);
APPA_API appa_status appa_config_load(const char* path, appa_config** out);
APPA_API void appa_config_free(appa_config* config);

APPA_API appa_status appa_config_set_seed(appa_config* config, uint64_t seed);
APPA_API appa_status appa_config_set_output_dir(appa_config* config, const char* dir);
APPA_API appa_status appa_config_seed(const appa_config* config, uint64_t* seed);

/* 16 hex digits plus terminator; `size` must be at least 17. */
APPA_API appa_status appa_config_hash(const appa_config* config, char* buffer, size_t size);

/* Canonical JSON with every default filled in. Writes at most `size` bytes
 * including the terminator and stores the full length (without terminator)
 * in `length` when it is not NULL. */
APPA_API appa_status appa_config_to_json(const appa_config* config, char* buffer, size_t size, size_t* length);

/* ---- commands ---- */

APPA_API size_t appa_command_count(void);
/* NULL when `index` is out of range. */
APPA_API const char* appa_command_name(size_t index);

/* Runs one pipeline command. `threads` <= 0 resolves as in
 * appa_resolve_threads; `resume` != 0 continues from training checkpoints.
 * `on_output` may be NULL. */
APPA_API appa_status appa_run(const appa_config* config, const char* command, int threads, int resume,
                              appa_output_fn on_output, void* user);

/* ---- ensembles ---- */

APPA_API appa_status appa_ensemble_load(const char* path, appa_ensemble** out);
APPA_API void appa_ensemble_free(appa_ensemble* ensemble);

/* Shape of the decoded states [members, steps, height, width, channels]. */
APPA_API appa_status appa_ensemble_shape(const appa_ensemble* ensemble, size_t dims[5]);
/* Copies all state values, row-major; `count` must equal their number. */
APPA_API appa_status appa_ensemble_states(const appa_ensemble* ensemble, double* out, size_t count);
APPA_API appa_status appa_ensemble_seed(const appa_ensemble* ensemble, size_t member, uint64_t* seed);
/* Task name, e.g. "reanalysis". Valid while the handle lives. */
APPA_API const char* appa_ensemble_task(const appa_ensemble* ensemble);

#ifdef __cplusplus
}
#endif

#endif /* APPA_APPA_H */
