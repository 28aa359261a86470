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
#include "systems/systems.hpp"

namespace appa::ae {

enum class Mode { kIdentity, kMlp, kConv };

struct AutoencoderConfig {
  Mode mode = Mode::kIdentity;
  double sigma_z = 0.01;
  // conv: space-to-depth factor and latent channels; latent is
  // [H / factor, W / factor, latent_channels].
  std::size_t factor = 4;
  std::size_t latent_channels = 4;
  // mlp: flat latent size.
  std::size_t latent_dim = 16;
  std::size_t hidden = 32;
  /// Per-channel loss weights (empty = uniform).
  std::vector<double> channel_weights;
  /// Per-grid-row loss weights (empty = uniform).
  std::vector<double> row_weights;

  double lr = 1e-3;
  std::size_t steps = 1000;
  std::size_t batch = 16;
  std::size_t micro_batch = 8;

  nlohmann::json to_json() const;
  static AutoencoderConfig from_json(const nlohmann::json& j);
};

/// Encoder/decoder pair. States are [H, W, C]; latents are flat vectors of
/// latent_dim() values (row-major [h, w, c] for the conv model).
class Autoencoder {
 public:
  Autoencoder() = default;
  /// Freshly initialized model for states of `state_shape`.
  Autoencoder(const AutoencoderConfig& config, const Shape& state_shape, std::uint64_t seed);

  const AutoencoderConfig& config() const { return config_; }
  const Shape& state_shape() const { return state_shape_; }
  Shape latent_shape() const;
  std::size_t latent_dim() const { return numel(latent_shape()); }
  std::size_t state_dim() const { return numel(state_shape_); }
  double sigma_z() const { return config_.sigma_z; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  /// x [n, H, W, C] -> z [n, latent_dim], parameters taken from `p`.
  ad::Var encode(ad::Var x, const BoundParams& p) const;
  /// z [n, latent_dim] -> x [n, H, W, C].
  ad::Var decode(ad::Var z, const BoundParams& p) const;
  /// Same with the parameters recorded as constants on z's graph.
  ad::Var decode(ad::Var z) const;

  /// Batched tensor helpers over any number of leading axes.
  Tensor encode_mean(const Tensor& x) const;
  Tensor encode(const Tensor& x, std::mt19937_64& rng) const;
  Tensor decode(const Tensor& z) const;

  /// Loss weights broadcast to [H, W, C].
  const Tensor& weight_field() const { return weights_; }

  nlohmann::json meta() const;
  void store(Container& out) const;
  static Autoencoder load(const Container& in);

 private:
  Tensor batch_call(const Tensor& input, std::size_t in_size, std::size_t out_size, bool encoder) const;

  AutoencoderConfig config_;
  Shape state_shape_;
  ParamSet params_;
  Tensor weights_;
};

Mode parse_mode(const std::string& name);
const char* to_string(Mode mode);

/// [H, W, C] weights w_row * w_channel. Empty vectors mean uniform; any
/// non-positive or non-finite weight is rejected.
Tensor weight_field(const Shape& state_shape, const std::vector<double>& channel_weights,
                    const std::vector<double>& row_weights);

/// sum(w (x_hat - x)^2) / sum(w) over a batch [n, H, W, C] with w [H, W, C].
ad::Var weighted_mse(ad::Var x_hat, ad::Var x, const Tensor& weights);
double weighted_mse(const Tensor& x_hat, const Tensor& x, const Tensor& weights);

struct TrainReport {
  std::vector<double> losses;
  double val_rmse = 0.0;
};

/// Trains on every state of `train` (shape [N, L, H, W, C]); validation RMSE
/// is measured on `val` with mean latents. Resumes from `state` when it is
/// non-null and saves through `checkpoint` after each step when given.
TrainReport train_autoencoder(Autoencoder& model, const Tensor& train, const Tensor& val, std::uint64_t seed,
                              std::size_t threads = 1, TrainState* state = nullptr,
                              const std::function<void(const TrainState&)>& checkpoint = {});

/// Standardized reconstruction RMSE with mean latents.
double reconstruction_rmse(const Autoencoder& model, const Tensor& states);

void save_autoencoder(const Autoencoder& model, const std::filesystem::path& path,
                      const nlohmann::json& provenance = nullptr);
Autoencoder load_autoencoder(const std::filesystem::path& path);

}  // namespace appa::ae
