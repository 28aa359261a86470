// Copyright 2026 The Appa Toy Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdint>
#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "appa/appa.h"

namespace {

int exit_code(appa_status s) {
  switch (s) {
    case APPA_OK: return 0;
    case APPA_CONFIG: return 2;
    case APPA_NUMERICAL: return 3;
    default: return 1;
  }
}

int report(appa_status s, const std::string& what) {
  std::fprintf(stderr, "appa: %s failed (%s): %s\n", what.c_str(), appa_status_name(s), appa_last_error());
  return exit_code(s);
}

void print_output(const char* path, void*) { std::printf("wrote %s\n", path); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent diffusion data assimilation on toy systems"};
  app.require_subcommand(1, 1);
  app.set_version_flag("--version", appa_version());

  std::string config_path;
  std::uint64_t seed = 0;
  std::string output_dir;
  int threads = 0;
  bool fresh = false;
  bool print_config = false;

  for (std::size_t i = 0; i < appa_command_count(); ++i) {
    CLI::App* sub = app.add_subcommand(appa_command_name(i));
    sub->add_option("-c,--config", config_path, "JSON run configuration")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("-o,--output-dir", output_dir, "override the config output directory");
    sub->add_option("-t,--threads", threads, "worker threads (default: APPA_TOY_THREADS or 1)");
    sub->add_flag("--fresh", fresh, "ignore existing training checkpoints");
    sub->add_flag("--print-config", print_config, "print the resolved configuration before running");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  appa_config* config = nullptr;
  appa_status s = appa_config_load(config_path.c_str(), &config);
  if (s != APPA_OK) return report(s, "loading " + config_path);
  if (app.get_subcommands().front()->count("--seed")) appa_config_set_seed(config, seed);
  if (!output_dir.empty()) s = appa_config_set_output_dir(config, output_dir.c_str());
  if (s == APPA_OK && print_config) {
    std::size_t length = 0;
    appa_config_to_json(config, nullptr, 0, &length);
    std::string text(length + 1, '\0');
    appa_config_to_json(config, text.data(), text.size(), nullptr);
    std::printf("%s\n", text.c_str());
  }
  if (s == APPA_OK) {
    char hash[17];
    std::uint64_t used_seed = 0;
    appa_config_hash(config, hash, sizeof hash);
    appa_config_seed(config, &used_seed);
    std::fprintf(stderr, "appa %s: config %s, seed %llu, %zu thread(s)\n", command.c_str(), hash,
                 static_cast<unsigned long long>(used_seed), appa_resolve_threads(threads));
    s = appa_run(config, command.c_str(), threads, fresh ? 0 : 1, print_output, nullptr);
  }
  appa_config_free(config);
  return s == APPA_OK ? 0 : report(s, command);
}
