// Copyright 2026 The Appa Toy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "core/autodiff.hpp"
#include "core/container.hpp"

namespace appa::ae {
class Autoencoder;
}

namespace appa::obs {

/// Grid mask over the H x W points of a state; every channel of a selected
/// point is observed.
using Mask = std::vector<bool>;

/// `count` = floor(fraction * H * W) points drawn uniformly without
/// replacement; the same mask applies at every step.
Mask station_mask(std::size_t height, std::size_t width, double fraction, std::uint64_t seed);
/// Columns [(step * speed) mod W, ... + width) of every row, wrapping.
Mask swath_mask(std::size_t height, std::size_t width, std::size_t step, std::size_t band, std::size_t speed);
Mask full_mask(std::size_t height, std::size_t width);
/// Flat [H, W, C] state indices observed by `mask`, ordered by point then
/// channel.
std::vector<std::size_t> mask_indices(const Mask& mask, const Shape& state_shape);

enum class ObservationKind { kStations, kSwath, kFull, kCustom };
ObservationKind parse_observation_kind(const std::string& name);
const char* to_string(ObservationKind kind);

struct StepObservations {
  std::vector<std::size_t> indices;  // flat indices into one [H, W, C] state
  std::vector<double> values;
  std::vector<double> noise_std;
};

/// y^{1:L} together with where and how noisily it was measured.
struct ObservationSet {
  ObservationKind kind = ObservationKind::kCustom;
  Shape state_shape;
  std::vector<StepObservations> steps;

  std::size_t length() const { return steps.size(); }
  std::size_t total() const;
  void validate() const;

  void store(Container& out, const std::string& prefix) const;
  static ObservationSet load(const Container& in, const std::string& prefix);
};

struct ObservationConfig {
  ObservationKind kind = ObservationKind::kStations;
  double fraction = 0.01;
  std::size_t band = 4;
  std::size_t speed = 4;
  double noise_std = 0.01;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static ObservationConfig from_json(const nlohmann::json& j);
};

/// Where observations fall for `length` steps (values left empty).
ObservationSet layout(const ObservationConfig& cfg, const Shape& state_shape, std::size_t length);

/// Fills the values of `layout` from x [L, H, W, C] plus Gaussian noise.
ObservationSet observe(const Tensor& x, ObservationSet layout, std::uint64_t seed);

/// Maps latents [n, D] to states [n, V] (flat).
using Decoder = std::function<ad::Var(ad::Var z)>;
Decoder decoder_of(const ae::Autoencoder& model);

/// A(z^{1:L}): decode each step, then gather the observed entries, plus the
/// diagonal observation noise.
class LatentObservationOperator {
 public:
  LatentObservationOperator() = default;
  /// `decoder` empty means the latent is the state.
  LatentObservationOperator(Decoder decoder, std::size_t latent_dim, const ObservationSet& set);

  /// Noise-free observations of latent rows `rows` of a [L, D] trajectory.
  static LatentObservationOperator pins(std::size_t length, std::size_t latent_dim,
                                        const std::vector<std::size_t>& rows, const Tensor& latents);

  /// z [L, D] -> [count].
  ad::Var apply(ad::Graph& g, ad::Var z) const;
  Tensor apply(const Tensor& z) const;

  std::size_t length() const { return length_; }
  std::size_t latent_dim() const { return latent_dim_; }
  std::size_t count() const { return y_.size(); }
  const Tensor& y() const { return y_; }
  /// Observation noise variances (diagonal of Sigma_y).
  const Tensor& noise_var() const { return noise_var_; }
  /// Indices into the flattened [L, V] decoded trajectory.
  const std::vector<std::size_t>& indices() const { return *indices_; }

 private:
  Decoder decoder_;
  std::size_t length_ = 0;
  std::size_t latent_dim_ = 0;
  std::size_t state_dim_ = 0;
  std::shared_ptr<const std::vector<std::size_t>> indices_ = std::make_shared<std::vector<std::size_t>>();
  Tensor y_;
  Tensor noise_var_;
};

}  // namespace appa::obs
