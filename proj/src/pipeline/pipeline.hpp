// Copyright 2026 The Appa Toy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "assimilation/assimilation.hpp"
#include "autoencoder/autoencoder.hpp"
#include "diffusion/diffusion.hpp"
#include "observation/observation.hpp"
#include "systems/systems.hpp"

namespace appa::pipeline {

/// System parameters plus the size of each generated split.
struct SystemBlock {
  systems::SystemSpec spec = systems::linear_gaussian(4);
  std::size_t train = 64;
  std::size_t val = 8;
  std::size_t test = 8;
  std::size_t length = 32;
  std::size_t burn_in = 100;
  // linear-gaussian construction parameters.
  double rho = 0.9;
  double angle = 0.3;

  nlohmann::json to_json() const;
  static SystemBlock from_json(const nlohmann::json& j);
};

struct DiffusionBlock {
  diffusion::DenoiserConfig model;
  diffusion::Schedule schedule;
  diffusion::SamplerConfig sampler;

  nlohmann::json to_json() const;
  static DiffusionBlock from_json(const nlohmann::json& j);
};

struct EvaluationBlock {
  /// Also score the last conditioning state repeated over the lead times.
  bool persistence = false;
  /// Which test trajectory the tasks run on.
  std::size_t trajectory = 0;

  nlohmann::json to_json() const;
  static EvaluationBlock from_json(const nlohmann::json& j);
};

/// Optional input overrides. Any path given must exist when the config is
/// validated; missing entries fall back to the output directory layout.
struct Paths {
  std::string train, val, test, autoencoder, denoiser, observations, ensemble, samples, fields;

  nlohmann::json to_json() const;
  static Paths from_json(const nlohmann::json& j);
};

/// One JSON document with a block per stage. Unknown keys are rejected with
/// a message naming them.
struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "appa_out";
  SystemBlock system;
  ae::AutoencoderConfig autoencoder;
  DiffusionBlock diffusion;
  std::size_t stride = 2;
  obs::ObservationConfig observation;
  assim::TaskSpec task;
  assim::GuidanceConfig guidance;
  EvaluationBlock evaluation;
  Paths paths;

  nlohmann::json to_json() const;
  /// FNV-1a of the canonical config without output_dir and paths, so moving
  /// a run does not change its outputs.
  std::string hash() const;

  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);
};

/// Header block embedded in every output.
nlohmann::json provenance(const RunConfig& cfg, const std::string& command);

/// Sub-seed for one pipeline stage.
std::uint64_t stage_seed(std::uint64_t seed, const std::string& stage);

/// Default file locations under output_dir, honouring Paths overrides.
struct Layout {
  explicit Layout(const RunConfig& cfg);
  std::filesystem::path root;
  std::filesystem::path train, val, test, stats;
  std::filesystem::path autoencoder, autoencoder_state, autoencoder_loss;
  std::filesystem::path denoiser, denoiser_state, denoiser_loss;
  std::filesystem::path samples, observations, ensemble;
  std::filesystem::path metrics, summary, psd, psd_summary, diagnostics, fields;
};

struct Options {
  std::size_t threads = 1;
  /// Continue from existing training checkpoints.
  bool resume = true;
};

/// Each command returns the files it wrote.
using Outputs = std::vector<std::filesystem::path>;

Outputs generate(const RunConfig& cfg, const Options& opt = {});
Outputs train_autoencoder(const RunConfig& cfg, const Options& opt = {});
Outputs train_denoiser(const RunConfig& cfg, const Options& opt = {});
Outputs sample_prior(const RunConfig& cfg, const Options& opt = {});
/// Reanalysis or filtering, per task.kind.
Outputs assimilate(const RunConfig& cfg, const Options& opt = {});
/// Observational or full-state forecast, per task.kind.
Outputs forecast(const RunConfig& cfg, const Options& opt = {});
Outputs evaluate(const RunConfig& cfg, const Options& opt = {});
Outputs psd(const RunConfig& cfg, const Options& opt = {});
Outputs diagnostics(const RunConfig& cfg, const Options& opt = {});

/// Names accepted by run().
const std::vector<std::string>& commands();
Outputs run(const std::string& command, const RunConfig& cfg, const Options& opt = {});

/// Ensemble file contents: states [M, T, H, W, C] in standardized units.
struct EnsembleFile {
  std::string task;
  Tensor states;
  Tensor latents;
  /// [T, H, W, C] baseline for forecasts, empty otherwise.
  Tensor persistence;
  std::vector<std::uint64_t> seeds;
  /// Test trajectory and first step of the truth slice.
  std::size_t trajectory = 0;
  std::size_t truth_start = 0;
  nlohmann::json provenance;
};

void save_ensemble(const EnsembleFile& e, const std::filesystem::path& path);
EnsembleFile load_ensemble(const std::filesystem::path& path);

}  // namespace appa::pipeline
