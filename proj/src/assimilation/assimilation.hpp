// Copyright 2026 The Appa Toy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "autoencoder/autoencoder.hpp"
#include "composition/composition.hpp"
#include "diffusion/diffusion.hpp"
#include "observation/observation.hpp"

namespace appa::assim {

/// How Var[z | z_t] enters the likelihood covariance.
///   exact:    sigma^2 * Jacobian of the denoiser (tangent products)
///   diagonal: sigma^2 v_k / (sigma^2 + v_k) per latent dimension, v_k the
///             prior variance of that dimension
///   scalar:   sigma^2 * I
enum class VarianceMode { kExact, kDiagonal, kScalar };
VarianceMode parse_variance_mode(const std::string& name);
const char* to_string(VarianceMode mode);

struct GuidanceConfig {
  bool enabled = true;
  std::size_t cg_iters = 32;
  double cg_tol = 1e-6;
  double guidance_scale = 1.0;
  VarianceMode variance = VarianceMode::kDiagonal;
  /// Per latent dimension prior variances for the diagonal mode (empty = 1).
  std::vector<double> prior_var;

  nlohmann::json to_json() const;
  static GuidanceConfig from_json(const nlohmann::json& j);
};

struct CgResult {
  Tensor x;
  std::size_t iterations = 0;
  double residual = 0.0;  // relative to |b|
  bool converged = false;
};

/// Solves apply(x) = b for symmetric positive definite `apply`. Stops at
/// relative residual `tol` or after `max_iters`, returning the iterate with
/// the smallest residual.
CgResult conjugate_gradient(const std::function<Tensor(const Tensor&)>& apply, const Tensor& b,
                            std::size_t max_iters, double tol);

struct LikelihoodScore {
  Tensor denoised;  // E[z | z_t] from the prior
  Tensor score;     // grad_{z_t} log N(y | A(denoised), Sigma_y + A V A^T), times guidance_scale
  CgResult cg;
};

/// Moment-matching likelihood score for a [L, D] noisy latent trajectory.
LikelihoodScore likelihood_score(const diffusion::Denoiser& prior, const obs::LatentObservationOperator& op,
                                 const Tensor& z, double sigma, std::int64_t t0, const GuidanceConfig& cfg);

struct SampleStats {
  std::size_t steps = 0;
  std::size_t cg_failures = 0;
};

/// One posterior draw of op.length() latent rows. Without observations or
/// with guidance disabled this is sample_prior with the same seed.
Tensor posterior_sample(const diffusion::Denoiser& prior, const obs::LatentObservationOperator& op,
                        const diffusion::Schedule& schedule, const diffusion::SamplerConfig& sampler,
                        const GuidanceConfig& guidance, std::uint64_t seed, std::int64_t t0 = 0,
                        SampleStats* stats = nullptr);

/// Seed of ensemble member m.
std::uint64_t member_seed(std::uint64_t seed, std::size_t member);

// ---------------------------------------------------------------------------
// Tasks.

enum class TaskKind { kReanalysis, kFiltering, kForecastObservational, kForecastFullState };
TaskKind parse_task_kind(const std::string& name);
const char* to_string(TaskKind kind);

struct TaskSpec {
  TaskKind kind = TaskKind::kReanalysis;
  /// Trajectory length L. Forecasts condition on the first K = context
  /// steps and predict the remaining L - K.
  std::size_t length = 24;
  std::size_t context = 4;
  std::size_t members = 16;
  /// Steps generated per forecast round; 0 means window / 2.
  std::size_t slide = 0;
  /// Trajectory index of the first step (clock features).
  std::int64_t start = 0;

  bool forecast() const { return kind == TaskKind::kForecastObservational || kind == TaskKind::kForecastFullState; }
  std::size_t lead() const { return forecast() ? length - context : 0; }
  /// Steps carrying observations or conditioning states.
  std::size_t observed() const { return forecast() ? context : length; }

  nlohmann::json to_json() const;
  static TaskSpec from_json(const nlohmann::json& j);
};

/// Trained pieces shared by all tasks. References must outlive the model.
struct Model {
  const ae::Autoencoder& autoencoder;
  const diffusion::Denoiser& window;
  std::size_t stride = 2;
  diffusion::Schedule schedule;
  diffusion::SamplerConfig sampler;
  GuidanceConfig guidance;
  std::size_t threads = 1;
};

struct EnsembleResult {
  Tensor latents;  // [M, T, D]
  Tensor states;   // [M, T, H, W, C]
  std::vector<std::uint64_t> seeds;
  std::size_t cg_failures = 0;
  std::size_t guided_steps = 0;
};

/// M posterior trajectories given observations of y.length() steps.
EnsembleResult reanalysis(const Model& model, const obs::ObservationSet& y, std::size_t members,
                          std::uint64_t seed, std::int64_t t0 = 0);
/// Last step of reanalysis with the same seeds.
EnsembleResult filtering(const Model& model, const obs::ObservationSet& y, std::size_t members, std::uint64_t seed,
                         std::int64_t t0 = 0);
/// Unconditional ensemble of `length` steps (guidance off).
EnsembleResult prior_ensemble(const Model& model, std::size_t length, std::size_t members, std::uint64_t seed,
                              std::int64_t t0 = 0);

/// Autoregressive rollout from conditioning latents [M or 1, c, D] whose
/// last row sits at trajectory index t0 + c - 1. Returns `lead` new steps.
EnsembleResult forecast_from_latents(const Model& model, const Tensor& context, std::size_t lead,
                                     std::size_t slide, std::size_t members, std::uint64_t seed, std::int64_t t0);
/// Conditions on encoded true states x [K, H, W, C].
EnsembleResult forecast_fullstate(const Model& model, const Tensor& states, std::size_t lead, std::size_t slide,
                                  std::size_t members, std::uint64_t seed, std::int64_t t0 = 0);
/// Conditions each member on the tail of its own reanalysis of y.
EnsembleResult forecast_observational(const Model& model, const obs::ObservationSet& y, std::size_t lead,
                                      std::size_t slide, std::size_t members, std::uint64_t seed,
                                      std::int64_t t0 = 0);

/// `state` [H, W, C] repeated `lead` times.
Tensor persistence(const Tensor& state, std::size_t lead);

}  // namespace appa::assim
