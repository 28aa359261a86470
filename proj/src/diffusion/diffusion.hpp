// Copyright 2026 The Appa Toy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "core/autodiff.hpp"
#include "core/params.hpp"
#include "core/train.hpp"

namespace appa::diffusion {

/// Variance-exploding noise levels, log-linear in t.
struct Schedule {
  double sigma_min = 1e-3;
  double sigma_max = 1e3;

  double sigma(double t) const;
  void validate() const;
  nlohmann::json to_json() const;
  static Schedule from_json(const nlohmann::json& j);
};

/// z + sigma * eps.
Tensor perturb(const Tensor& z, double sigma, std::mt19937_64& rng);

/// Estimates E[z | z_t] for windows of latent states. Inputs are [rows,
/// step_dim]; `t0` is the time index of the first row (clock features).
class Denoiser {
 public:
  virtual ~Denoiser() = default;

  /// Rows handled per call; 0 means any number.
  virtual std::size_t window() const = 0;
  virtual std::size_t step_dim() const = 0;
  virtual ad::Var denoise(ad::Graph& g, ad::Var z, double sigma, std::int64_t t0) const = 0;

  Tensor denoise(const Tensor& z, double sigma, std::int64_t t0 = 0) const;
};

/// (d(z) - z) / sigma^2.
Tensor score_from_denoiser(const Denoiser& denoiser, const Tensor& z, double sigma, std::int64_t t0 = 0);
Tensor score_from_denoised(const Tensor& denoised, const Tensor& z, double sigma);

/// Exact posterior mean under a Gaussian prior N(mean, cov) over the
/// flattened [rows, dim] window: mean + cov (cov + sigma^2 I)^-1 (z - mean).
class GaussianDenoiser final : public Denoiser {
 public:
  GaussianDenoiser(Tensor mean, const Tensor& cov, std::size_t rows, std::size_t dim);

  std::size_t window() const override { return rows_; }
  std::size_t step_dim() const override { return dim_; }
  ad::Var denoise(ad::Graph& g, ad::Var z, double sigma, std::int64_t t0) const override;
  using Denoiser::denoise;

  /// -(cov + sigma^2 I)^-1 (z - mean), computed by a direct solve.
  Tensor direct_score(const Tensor& z, double sigma) const;
  const Tensor& mean() const { return mean_; }
  const Tensor& cov() const { return cov_; }

 private:
  std::size_t rows_, dim_;
  Tensor mean_;
  Tensor cov_;
  Tensor basis_;   // eigenvectors as columns, [n, n]
  Tensor eigen_;   // eigenvalues, [n]
};

enum class Architecture { kMlp, kConv };

struct DenoiserConfig {
  Architecture arch = Architecture::kMlp;
  std::size_t window = 24;
  std::size_t hidden = 128;
  std::size_t blocks = 2;
  std::size_t embedding = 16;
  /// Clock period in steps; 0 disables clock features.
  std::size_t clock_period = 24;
  /// "none" regresses ||d - z||^2 directly; "edm" rescales it by
  /// (sigma^2 + s^2) / (sigma s)^2 so every noise level weighs alike.
  std::string loss_weighting = "edm";

  double lr = 1e-3;
  std::size_t steps = 2000;
  std::size_t batch = 32;
  std::size_t micro_batch = 8;

  nlohmann::json to_json() const;
  static DenoiserConfig from_json(const nlohmann::json& j);
};

/// Learned window denoiser with preconditioning around normalized latents
/// (per-dimension mean, one global scale).
class NetworkDenoiser final : public Denoiser {
 public:
  NetworkDenoiser() = default;
  /// latent_shape is the per-step latent shape ([h, w, c] for the conv
  /// architecture, anything for the MLP).
  NetworkDenoiser(const DenoiserConfig& config, const Shape& latent_shape, std::uint64_t seed);

  std::size_t window() const override { return config_.window; }
  std::size_t step_dim() const override { return numel(latent_shape_); }
  ad::Var denoise(ad::Graph& g, ad::Var z, double sigma, std::int64_t t0) const override;
  using Denoiser::denoise;

  /// Batched forward on [B, window, step_dim] with per-sample noise levels.
  ad::Var forward(ad::Var z, const std::vector<double>& sigma, const std::vector<std::int64_t>& t0,
                  const BoundParams& p) const;

  /// Latent normalization from training windows [N, L, step_dim].
  void fit_normalization(const Tensor& latents);

  const DenoiserConfig& config() const { return config_; }
  const Shape& latent_shape() const { return latent_shape_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  const Tensor& latent_mean() const { return latent_mean_; }
  double latent_scale() const { return latent_scale_; }

  void store(Container& out) const;
  static NetworkDenoiser load(const Container& in);

 private:
  Tensor features(const std::vector<double>& sigma, const std::vector<std::int64_t>& t0) const;
  std::size_t feature_dim() const;

  DenoiserConfig config_;
  Shape latent_shape_;
  ParamSet params_;
  Tensor latent_mean_;
  double latent_scale_ = 1.0;
};

Architecture parse_architecture(const std::string& name);
const char* to_string(Architecture arch);

struct DenoiserReport {
  std::vector<double> losses;
  double val_loss = 0.0;
};

/// Windowed denoising score matching on latent trajectories [N, L, D]:
/// trajectory, window start in {0, ..., L - W} and t ~ U(0, 1) drawn per
/// sample. val_loss is the unweighted loss on `val` with a fixed draw.
DenoiserReport train_denoiser(NetworkDenoiser& model, const Tensor& latents, const Tensor& val,
                              const Schedule& schedule, std::uint64_t seed, std::size_t threads = 1,
                              TrainState* state = nullptr,
                              const std::function<void(const TrainState&)>& checkpoint = {});

/// Mean unweighted ||d(z_t) - z||^2 per element over fixed-seed draws.
double denoising_loss(const NetworkDenoiser& model, const Tensor& latents, const Schedule& schedule,
                      std::size_t draws, std::uint64_t seed);

void save_denoiser(const NetworkDenoiser& model, const Schedule& schedule, const std::filesystem::path& path,
                   const nlohmann::json& provenance = nullptr);
NetworkDenoiser load_denoiser(const std::filesystem::path& path, Schedule* schedule = nullptr);

struct SamplerConfig {
  std::size_t steps = 64;
  /// 0 = deterministic, 1 = ancestral.
  double churn = 0.0;
  /// 2 extrapolates d from the previous step (deterministic runs only).
  int order = 2;
  /// Langevin corrector steps after each update, z += delta (d - z) +
  /// sqrt(2 delta) sigma eps.
  std::size_t corrections = 0;
  double delta = 0.25;
};

/// Effective denoiser used at one reverse step: (z, sigma, step index k).
using DenoiseStep = std::function<Tensor(const Tensor& z, double sigma, std::size_t step)>;

/// Noise levels sigma_k = sigma(k / n) for k = n, ..., 1.
std::vector<double> sampling_sigmas(const Schedule& schedule, std::size_t steps);

/// Reverse VE update z <- d + (sigma_{k-1} / sigma_k)(z - d) from z ~ N(0,
/// sigma_max^2 I) down to sigma_0 = 0.
Tensor sample(const DenoiseStep& denoise, const Schedule& schedule, const Shape& shape, const SamplerConfig& cfg,
              std::mt19937_64& rng);

/// Unconditional sample of `rows` latent states.
Tensor sample_prior(const Denoiser& denoiser, const Schedule& schedule, std::size_t rows, const SamplerConfig& cfg,
                    std::uint64_t seed, std::int64_t t0 = 0);

}  // namespace appa::diffusion
