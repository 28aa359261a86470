// Copyright 2026 The Appa Toy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "core/tensor.hpp"

namespace appa::systems {

enum class SystemKind { kLinearGaussian, kLorenz96, kAdvection2d };

const char* to_string(SystemKind kind);
SystemKind parse_kind(const std::string& name);

/// A toy dynamical system. States are [height, width, channels]; the 1-D
/// systems use height 1.
struct SystemSpec {
  SystemKind kind = SystemKind::kLorenz96;
  std::size_t height = 1;
  std::size_t width = 40;
  std::size_t channels = 1;
  double dt = 0.05;

  // lorenz96
  double forcing = 8.0;
  std::size_t substeps = 1;

  // linear-gaussian: x' = F x + w, w ~ N(0, Q); both [n, n] with n = state size.
  Tensor transition;
  Tensor process_cov;

  // advection2d, in grid cells and steps.
  double velocity_x = 1.0;
  double velocity_y = 0.5;
  double diffusivity = 0.02;
  double drag = 0.05;
  double forcing_amplitude = 1.0;
  double forcing_scale = 3.0;

  Shape state_shape() const { return {height, width, channels}; }
  std::size_t state_size() const { return height * width * channels; }

  void validate() const;
  nlohmann::json to_json() const;
  static SystemSpec from_json(const nlohmann::json& j);
};

/// 40-variable ring by default.
SystemSpec lorenz96(std::size_t dim = 40, double forcing = 8.0, double dt = 0.05, std::size_t substeps = 1);
/// F = rho * R with R a chain of Givens rotations, Q = (1 - rho^2) I, so the
/// stationary covariance is the identity.
SystemSpec linear_gaussian(std::size_t dim, double rho = 0.9, double angle = 0.3);
SystemSpec advection2d(std::size_t height = 32, std::size_t width = 32, std::size_t channels = 1);

/// Solves P = F P Fᵀ + Q for a linear-Gaussian spec.
Tensor stationary_covariance(const SystemSpec& spec);

/// Length-L trajectory [L, H, W, C] whose first state is x0.
Tensor simulate(const SystemSpec& spec, const Tensor& x0, std::size_t length, std::uint64_t seed);

/// Draw from the system's natural initial distribution (stationary law for
/// the linear-Gaussian system, perturbed rest state otherwise).
Tensor initial_state(const SystemSpec& spec, std::mt19937_64& rng);

/// N independent trajectories [N, L, H, W, C]. Trajectory i uses RNG stream
/// i of `seed`, so the output does not depend on `threads`.
Tensor generate(const SystemSpec& spec, std::size_t count, std::size_t length, std::size_t burn_in,
                std::uint64_t seed, std::size_t threads = 1);

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> std;

  nlohmann::json to_json() const;
  static ChannelStats from_json(const nlohmann::json& j);
  friend bool operator==(const ChannelStats&, const ChannelStats&) = default;
};

/// Per-channel mean and population std over every value of the trailing
/// channel axis, ignoring NaNs.
ChannelStats channel_stats(const Tensor& raw);

struct TrajectoryDataset {
  Tensor trajectories;  // [N, L, H, W, C], standardized
  ChannelStats stats;
  SystemSpec spec;
  std::string split = "train";

  std::size_t count() const { return trajectories.dim(0); }
  std::size_t length() const { return trajectories.dim(1); }
};

/// Standardizes raw trajectories. Statistics are estimated from `raw` unless
/// `stats` is given (val/test splits reuse the train statistics). NaNs become
/// zeros after standardization.
TrajectoryDataset standardize(const Tensor& raw, const SystemSpec& spec, const std::string& split,
                              const std::optional<ChannelStats>& stats = std::nullopt);
Tensor standardize_values(const Tensor& raw, const ChannelStats& stats);
Tensor destandardize(const ChannelStats& stats, const Tensor& values);

/// `provenance`, when not null, is stored verbatim in the header.
void save_dataset(const TrajectoryDataset& dataset, const std::filesystem::path& path,
                  const nlohmann::json& provenance = nullptr);
TrajectoryDataset load_dataset(const std::filesystem::path& path);

}  // namespace appa::systems
