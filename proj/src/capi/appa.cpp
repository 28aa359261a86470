// Copyright 2026 The Appa Toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "appa/appa.h"

#include <algorithm>
#include <cstring>
#include <exception>
#include <new>
#include <string>

#include "core/error.hpp"
#include "core/parallel.hpp"
#include "pipeline/pipeline.hpp"

struct appa_config {
  appa::pipeline::RunConfig value;
};

struct appa_ensemble {
  appa::pipeline::EnsembleFile value;
};

namespace {

thread_local std::string last_error;

appa_status status_of(appa::ErrorCode code) {
  using appa::ErrorCode;
  switch (code) {
    case ErrorCode::kConfig: return APPA_CONFIG;
    case ErrorCode::kNumerical: return APPA_NUMERICAL;
    case ErrorCode::kIo: return APPA_IO;
    case ErrorCode::kShapeMismatch: return APPA_SHAPE;
    case ErrorCode::kHeaderParse:
    case ErrorCode::kVersionMismatch:
    case ErrorCode::kTruncated:
    case ErrorCode::kHeaderMismatch: return APPA_FORMAT;
    case ErrorCode::kInvalidArgument: return APPA_INVALID_ARGUMENT;
  }
  return APPA_ERROR;
}

appa_status failed(appa_status status, std::string message) {
  last_error = std::move(message);
  return status;
}

template <typename F>
appa_status guarded(F&& body) {
  try {
    body();
    last_error.clear();
    return APPA_OK;
  } catch (const appa::Error& e) {
    return failed(status_of(e.code()), e.what());
  } catch (const std::bad_alloc&) {
    return failed(APPA_ERROR, "out of memory");
  } catch (const std::exception& e) {
    return failed(APPA_ERROR, e.what());
  }
}

}  // namespace

extern "C" {

const char* appa_version(void) { return "0.1.0"; }

const char* appa_status_name(appa_status status) {
  switch (status) {
    case APPA_OK: return "ok";
    case APPA_ERROR: return "error";
    case APPA_CONFIG: return "config";
    case APPA_NUMERICAL: return "numerical";
    case APPA_IO: return "io";
    case APPA_SHAPE: return "shape";
    case APPA_FORMAT: return "format";
    case APPA_INVALID_ARGUMENT: return "invalid-argument";
  }
  return "unknown";
}

const char* appa_last_error(void) { return last_error.c_str(); }

size_t appa_resolve_threads(int requested) { return appa::resolve_threads(requested); }

appa_status appa_config_parse(const char* json, appa_config** out) {
  if (!json || !out) return failed(APPA_INVALID_ARGUMENT, "appa_config_parse: null argument");
  *out = nullptr;
  return guarded([&] { *out = new appa_config{appa::pipeline::RunConfig::parse(json)}; });
}

appa_status appa_config_load(const char* path, appa_config** out) {
  if (!path || !out) return failed(APPA_INVALID_ARGUMENT, "appa_config_load: null argument");
  *out = nullptr;
  return guarded([&] { *out = new appa_config{appa::pipeline::RunConfig::load(path)}; });
}

void appa_config_free(appa_config* config) { delete config; }

appa_status appa_config_set_seed(appa_config* config, uint64_t seed) {
  if (!config) return failed(APPA_INVALID_ARGUMENT, "appa_config_set_seed: null config");
  config->value.seed = seed;
  return APPA_OK;
}

appa_status appa_config_set_output_dir(appa_config* config, const char* dir) {
  if (!config || !dir) return failed(APPA_INVALID_ARGUMENT, "appa_config_set_output_dir: null argument");
  if (!*dir) return failed(APPA_CONFIG, "output directory must not be empty");
  config->value.output_dir = dir;
  return APPA_OK;
}

appa_status appa_config_seed(const appa_config* config, uint64_t* seed) {
  if (!config || !seed) return failed(APPA_INVALID_ARGUMENT, "appa_config_seed: null argument");
  *seed = config->value.seed;
  return APPA_OK;
}

appa_status appa_config_hash(const appa_config* config, char* buffer, size_t size) {
  if (!config || !buffer) return failed(APPA_INVALID_ARGUMENT, "appa_config_hash: null argument");
  if (size < 17) return failed(APPA_INVALID_ARGUMENT, "appa_config_hash: buffer needs 17 bytes");
  return guarded([&] {
    const std::string h = config->value.hash();
    std::memcpy(buffer, h.c_str(), h.size() + 1);
  });
}

appa_status appa_config_to_json(const appa_config* config, char* buffer, size_t size, size_t* length) {
  if (!config) return failed(APPA_INVALID_ARGUMENT, "appa_config_to_json: null config");
  return guarded([&] {
    const std::string text = config->value.to_json().dump(2);
    if (length) *length = text.size();
    if (buffer && size > 0) {
      const size_t n = std::min(size - 1, text.size());
      std::memcpy(buffer, text.data(), n);
      buffer[n] = '\0';
    }
  });
}

size_t appa_command_count(void) { return appa::pipeline::commands().size(); }

const char* appa_command_name(size_t index) {
  const auto& names = appa::pipeline::commands();
  return index < names.size() ? names[index].c_str() : nullptr;
}

appa_status appa_run(const appa_config* config, const char* command, int threads, int resume,
                     appa_output_fn on_output, void* user) {
  if (!config || !command) return failed(APPA_INVALID_ARGUMENT, "appa_run: null argument");
  return guarded([&] {
    appa::pipeline::Options opt;
    opt.threads = appa::resolve_threads(threads);
    opt.resume = resume != 0;
    const auto outputs = appa::pipeline::run(command, config->value, opt);
    if (on_output)
      for (const auto& p : outputs) on_output(p.string().c_str(), user);
  });
}

appa_status appa_ensemble_load(const char* path, appa_ensemble** out) {
  if (!path || !out) return failed(APPA_INVALID_ARGUMENT, "appa_ensemble_load: null argument");
  *out = nullptr;
  return guarded([&] { *out = new appa_ensemble{appa::pipeline::load_ensemble(path)}; });
}

void appa_ensemble_free(appa_ensemble* ensemble) { delete ensemble; }

appa_status appa_ensemble_shape(const appa_ensemble* ensemble, size_t dims[5]) {
  if (!ensemble || !dims) return failed(APPA_INVALID_ARGUMENT, "appa_ensemble_shape: null argument");
  const auto& s = ensemble->value.states.shape();
  for (size_t i = 0; i < 5; ++i) dims[i] = s[i];
  return APPA_OK;
}

appa_status appa_ensemble_states(const appa_ensemble* ensemble, double* out, size_t count) {
  if (!ensemble || !out) return failed(APPA_INVALID_ARGUMENT, "appa_ensemble_states: null argument");
  const auto& v = ensemble->value.states.values();
  if (count != v.size())
    return failed(APPA_SHAPE, "appa_ensemble_states: buffer holds " + std::to_string(count) + " values, ensemble has " +
                                  std::to_string(v.size()));
  std::memcpy(out, v.data(), v.size() * sizeof(double));
  return APPA_OK;
}

appa_status appa_ensemble_seed(const appa_ensemble* ensemble, size_t member, uint64_t* seed) {
  if (!ensemble || !seed) return failed(APPA_INVALID_ARGUMENT, "appa_ensemble_seed: null argument");
  if (member >= ensemble->value.seeds.size())
    return failed(APPA_INVALID_ARGUMENT, "appa_ensemble_seed: member " + std::to_string(member) + " of " +
                                             std::to_string(ensemble->value.seeds.size()));
  *seed = ensemble->value.seeds[member];
  return APPA_OK;
}

const char* appa_ensemble_task(const appa_ensemble* ensemble) {
  return ensemble ? ensemble->value.task.c_str() : "";
}

}  // extern "C"
