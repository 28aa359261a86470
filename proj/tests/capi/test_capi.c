/* Copyright 2026 The Appa Toy Authors
 * SPDX-License-Identifier: Apache-2.0
 *
 * Drives the pipeline through the C interface alone.
 */
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "appa/appa.h"

static int failures = 0;

#define EXPECT(cond)                                                  \
  do {                                                                \
    if (!(cond)) {                                                    \
      fprintf(stderr, "%s:%d: expected %s\n", __FILE__, __LINE__, #cond); \
      ++failures;                                                     \
    }                                                                 \
  } while (0)

static void count_output(const char* path, void* user) {
  (void)path;
  ++*(int*)user;
}

static const char* kConfig =
    "{\"seed\": 3, \"output_dir\": \"%s\","
    " \"system\": {\"kind\": \"linear-gaussian\", \"dim\": 2, \"train\": 8, \"val\": 1, \"test\": 1, \"length\": 10},"
    " \"diffusion\": {\"model\": {\"window\": 4, \"hidden\": 8, \"blocks\": 1, \"steps\": 5, \"batch\": 4,"
    " \"micro_batch\": 4}, \"sampler\": {\"steps\": 4}},"
    " \"observation\": {\"fraction\": 0.5},"
    " \"task\": {\"kind\": \"reanalysis\", \"length\": 6, \"members\": 2}}";

int main(int argc, char** argv) {
  const char* dir = argc > 1 ? argv[1] : "appa_capi_out";
  char json[1024];
  snprintf(json, sizeof json, kConfig, dir);

  appa_config* bad = NULL;
  EXPECT(appa_config_parse("{\"foo\": 1}", &bad) == APPA_CONFIG);
  EXPECT(bad == NULL);
  EXPECT(strstr(appa_last_error(), "foo") != NULL);
  EXPECT(appa_config_parse("{not json", &bad) == APPA_CONFIG);
  EXPECT(appa_config_parse(NULL, &bad) == APPA_INVALID_ARGUMENT);
  EXPECT(appa_config_load("/nonexistent/config.json", &bad) == APPA_CONFIG);
  EXPECT(strcmp(appa_status_name(APPA_NUMERICAL), "numerical") == 0);

  appa_config* cfg = NULL;
  if (appa_config_parse(json, &cfg) != APPA_OK) {
    fprintf(stderr, "parse failed: %s\n", appa_last_error());
    return 1;
  }
  EXPECT(strcmp(appa_last_error(), "") == 0);

  char hash[17];
  EXPECT(appa_config_hash(cfg, hash, 8) == APPA_INVALID_ARGUMENT);
  EXPECT(appa_config_hash(cfg, hash, sizeof hash) == APPA_OK);
  EXPECT(strlen(hash) == 16);

  size_t length = 0;
  EXPECT(appa_config_to_json(cfg, NULL, 0, &length) == APPA_OK);
  EXPECT(length > 0);
  char* text = malloc(length + 1);
  EXPECT(appa_config_to_json(cfg, text, length + 1, NULL) == APPA_OK);
  EXPECT(strlen(text) == length);
  EXPECT(strstr(text, "\"window\": 4") != NULL);
  free(text);

  uint64_t seed = 0;
  EXPECT(appa_config_set_seed(cfg, 11) == APPA_OK);
  EXPECT(appa_config_seed(cfg, &seed) == APPA_OK && seed == 11);
  EXPECT(appa_config_set_output_dir(cfg, "") == APPA_CONFIG);

  EXPECT(appa_command_count() == 9);
  EXPECT(strcmp(appa_command_name(0), "generate") == 0);
  EXPECT(appa_command_name(appa_command_count()) == NULL);
  EXPECT(appa_run(cfg, "no-such-command", 1, 0, NULL, NULL) == APPA_CONFIG);
  EXPECT(appa_run(cfg, "evaluate", 1, 0, NULL, NULL) == APPA_IO);

  const char* steps[] = {"generate", "train-ae", "train-denoiser", "assimilate", "evaluate"};
  for (size_t i = 0; i < sizeof steps / sizeof steps[0]; ++i) {
    int written = 0;
    const appa_status s = appa_run(cfg, steps[i], 1, 0, count_output, &written);
    if (s != APPA_OK) fprintf(stderr, "%s: %s\n", steps[i], appa_last_error());
    EXPECT(s == APPA_OK);
    EXPECT(written > 0);
  }

  char path[1024];
  snprintf(path, sizeof path, "%s/ensemble.appa", dir);
  appa_ensemble* ens = NULL;
  EXPECT(appa_ensemble_load(path, &ens) == APPA_OK);
  if (ens) {
    size_t dims[5];
    EXPECT(appa_ensemble_shape(ens, dims) == APPA_OK);
    EXPECT(dims[0] == 2 && dims[1] == 6);
    const size_t count = dims[0] * dims[1] * dims[2] * dims[3] * dims[4];
    double* values = malloc(count * sizeof *values);
    EXPECT(appa_ensemble_states(ens, values, count - 1) == APPA_SHAPE);
    EXPECT(appa_ensemble_states(ens, values, count) == APPA_OK);
    free(values);
    uint64_t s0 = 0, s1 = 0;
    EXPECT(appa_ensemble_seed(ens, 0, &s0) == APPA_OK);
    EXPECT(appa_ensemble_seed(ens, 1, &s1) == APPA_OK);
    EXPECT(s0 != s1);
    EXPECT(appa_ensemble_seed(ens, 2, &s0) == APPA_INVALID_ARGUMENT);
    EXPECT(strcmp(appa_ensemble_task(ens), "reanalysis") == 0);
    appa_ensemble_free(ens);
  }
  snprintf(path, sizeof path, "%s/metrics.csv", dir);
  EXPECT(appa_ensemble_load(path, &ens) == APPA_FORMAT);

  appa_config_free(cfg);
  if (failures) fprintf(stderr, "%d expectation(s) failed\n", failures);
  return failures ? 1 : 0;
}
