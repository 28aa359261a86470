// Copyright 2026 The Appa Toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "observation/observation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "autoencoder/autoencoder.hpp"
#include "core/error.hpp"
#include "core/rng.hpp"

namespace appa::obs {

Mask station_mask(std::size_t height, std::size_t width, double fraction, std::uint64_t seed) {
  check(fraction > 0.0 && fraction <= 1.0, ErrorCode::kConfig, "station fraction must be in (0, 1], got {}",
        fraction);
  const std::size_t points = height * width;
  const auto count = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(points) + 1e-9));
  check(count >= 1, ErrorCode::kConfig, "station fraction {} selects no points on a {}x{} grid", fraction, height,
        width);
  std::vector<std::size_t> order(points);
  std::iota(order.begin(), order.end(), 0);
  auto rng = make_rng(seed, 0x7374);
  // Partial Fisher-Yates: the first `count` entries are a uniform subset.
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, points - 1);
    std::swap(order[i], order[pick(rng)]);
  }
  Mask mask(points, false);
  for (std::size_t i = 0; i < count; ++i) mask[order[i]] = true;
  return mask;
}

Mask swath_mask(std::size_t height, std::size_t width, std::size_t step, std::size_t band, std::size_t speed) {
  check(band >= 1, ErrorCode::kConfig, "swath width must be >= 1");
  check(band <= width, ErrorCode::kConfig, "swath width {} exceeds the grid width {}", band, width);
  Mask mask(height * width, false);
  const std::size_t offset = (step * speed) % width;
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t k = 0; k < band; ++k) mask[y * width + (offset + k) % width] = true;
  return mask;
}

Mask full_mask(std::size_t height, std::size_t width) { return Mask(height * width, true); }

std::vector<std::size_t> mask_indices(const Mask& mask, const Shape& state_shape) {
  check(state_shape.size() == 3 && mask.size() == state_shape[0] * state_shape[1], ErrorCode::kShapeMismatch,
        "mask of {} points for state {}", mask.size(), shape_string(state_shape));
  const std::size_t c = state_shape[2];
  std::vector<std::size_t> out;
  for (std::size_t p = 0; p < mask.size(); ++p)
    if (mask[p])
      for (std::size_t k = 0; k < c; ++k) out.push_back(p * c + k);
  return out;
}

ObservationKind parse_observation_kind(const std::string& name) {
  if (name == "stations") return ObservationKind::kStations;
  if (name == "swath") return ObservationKind::kSwath;
  if (name == "full") return ObservationKind::kFull;
  if (name == "custom") return ObservationKind::kCustom;
  fail(ErrorCode::kConfig, "unknown observation kind '{}'", name);
}

const char* to_string(ObservationKind kind) {
  switch (kind) {
    case ObservationKind::kStations: return "stations";
    case ObservationKind::kSwath: return "swath";
    case ObservationKind::kFull: return "full";
    case ObservationKind::kCustom: return "custom";
  }
  return "custom";
}

std::size_t ObservationSet::total() const {
  std::size_t n = 0;
  for (const auto& s : steps) n += s.indices.size();
  return n;
}

void ObservationSet::validate() const {
  check(state_shape.size() == 3, ErrorCode::kShapeMismatch, "observation state shape must be [H, W, C], got {}",
        shape_string(state_shape));
  const std::size_t v = numel(state_shape);
  for (std::size_t t = 0; t < steps.size(); ++t) {
    const auto& s = steps[t];
    check(s.values.size() == s.indices.size() && s.noise_std.size() == s.indices.size(), ErrorCode::kShapeMismatch,
          "step {}: {} indices, {} values, {} noise levels", t, s.indices.size(), s.values.size(),
          s.noise_std.size());
    for (std::size_t i = 0; i < s.indices.size(); ++i) {
      check(s.indices[i] < v, ErrorCode::kShapeMismatch, "step {}: index {} outside a state of {} values", t,
            s.indices[i], v);
      check(s.noise_std[i] >= 0.0, ErrorCode::kConfig, "step {}: observation noise std must be >= 0", t);
      check(std::isfinite(s.values[i]), ErrorCode::kNumerical, "step {}: non-finite observation", t);
    }
  }
}

void ObservationSet::store(Container& out, const std::string& prefix) const {
  std::vector<std::size_t> counts;
  std::vector<double> idx, val, noise;
  for (const auto& s : steps) {
    counts.push_back(s.indices.size());
    for (std::size_t i : s.indices) idx.push_back(static_cast<double>(i));
    val.insert(val.end(), s.values.begin(), s.values.end());
    noise.insert(noise.end(), s.noise_std.begin(), s.noise_std.end());
  }
  out.meta[prefix + "observations"] = {{"kind", to_string(kind)}, {"state_shape", state_shape}, {"counts", counts}};
  out.add(prefix + "obs_indices", Tensor({idx.size()}, idx));
  out.add(prefix + "obs_values", Tensor({val.size()}, val));
  out.add(prefix + "obs_noise_std", Tensor({noise.size()}, noise));
}

ObservationSet ObservationSet::load(const Container& in, const std::string& prefix) {
  ObservationSet set;
  std::vector<std::size_t> counts;
  try {
    const auto& m = in.meta.at(prefix + "observations");
    set.kind = parse_observation_kind(m.at("kind").get<std::string>());
    set.state_shape = m.at("state_shape").get<Shape>();
    counts = m.at("counts").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kHeaderParse, "malformed observation header: {}", e.what());
  }
  const Tensor& idx = in.tensor(prefix + "obs_indices");
  const Tensor& val = in.tensor(prefix + "obs_values");
  const Tensor& noise = in.tensor(prefix + "obs_noise_std");
  const std::size_t total = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
  check(idx.size() == total && val.size() == total && noise.size() == total, ErrorCode::kHeaderMismatch,
        "observation header declares {} values, payload has {}/{}/{}", total, idx.size(), val.size(), noise.size());
  std::size_t at = 0;
  for (std::size_t c : counts) {
    StepObservations s;
    for (std::size_t i = 0; i < c; ++i, ++at) {
      s.indices.push_back(static_cast<std::size_t>(idx[at]));
      s.values.push_back(val[at]);
      s.noise_std.push_back(noise[at]);
    }
    set.steps.push_back(std::move(s));
  }
  set.validate();
  return set;
}

nlohmann::json ObservationConfig::to_json() const {
  return {{"kind", to_string(kind)}, {"fraction", fraction}, {"band", band},
          {"speed", speed},          {"noise_std", noise_std}, {"seed", seed}};
}

ObservationConfig ObservationConfig::from_json(const nlohmann::json& j) {
  ObservationConfig c;
  c.kind = parse_observation_kind(j.value("kind", std::string("stations")));
  c.fraction = j.value("fraction", c.fraction);
  c.band = j.value("band", c.band);
  c.speed = j.value("speed", c.speed);
  c.noise_std = j.value("noise_std", c.noise_std);
  c.seed = j.value("seed", c.seed);
  check(c.noise_std >= 0.0, ErrorCode::kConfig, "observation noise_std must be >= 0, got {}", c.noise_std);
  return c;
}

ObservationSet layout(const ObservationConfig& cfg, const Shape& state_shape, std::size_t length) {
  check(state_shape.size() == 3, ErrorCode::kShapeMismatch, "state shape must be [H, W, C]");
  const std::size_t h = state_shape[0], w = state_shape[1];
  ObservationSet set;
  set.kind = cfg.kind;
  set.state_shape = state_shape;
  Mask fixed;
  if (cfg.kind == ObservationKind::kStations) fixed = station_mask(h, w, cfg.fraction, cfg.seed);
  if (cfg.kind == ObservationKind::kFull) fixed = full_mask(h, w);
  check(cfg.kind != ObservationKind::kCustom, ErrorCode::kConfig, "custom observations need explicit indices");
  for (std::size_t t = 0; t < length; ++t) {
    const Mask mask = cfg.kind == ObservationKind::kSwath ? swath_mask(h, w, t, cfg.band, cfg.speed) : fixed;
    StepObservations s;
    s.indices = mask_indices(mask, state_shape);
    s.noise_std.assign(s.indices.size(), cfg.noise_std);
    set.steps.push_back(std::move(s));
  }
  return set;
}

ObservationSet observe(const Tensor& x, ObservationSet set, std::uint64_t seed) {
  const std::size_t v = numel(set.state_shape);
  check(x.rank() >= 1 && x.dim(0) == set.length() && x.size() == set.length() * v, ErrorCode::kShapeMismatch,
        "observing {} with a layout of {} steps of {}", shape_string(x.shape()), set.length(),
        shape_string(set.state_shape));
  auto rng = make_rng(seed, 0x6f6273);
  std::normal_distribution<double> normal;
  for (std::size_t t = 0; t < set.length(); ++t) {
    auto& s = set.steps[t];
    s.values.resize(s.indices.size());
    for (std::size_t i = 0; i < s.indices.size(); ++i) {
      check(s.indices[i] < v, ErrorCode::kShapeMismatch, "observation index {} outside the state", s.indices[i]);
      s.values[i] = x[t * v + s.indices[i]] + s.noise_std[i] * normal(rng);
    }
  }
  set.validate();
  return set;
}

Decoder decoder_of(const ae::Autoencoder& model) {
  const std::size_t v = model.state_dim();
  return [&model, v](ad::Var z) {
    const std::size_t n = z.shape()[0];
    return ad::reshape(model.decode(z), {n, v});
  };
}

LatentObservationOperator::LatentObservationOperator(Decoder decoder, std::size_t latent_dim,
                                                     const ObservationSet& set)
    : decoder_(std::move(decoder)), length_(set.length()), latent_dim_(latent_dim) {
  set.validate();
  state_dim_ = numel(set.state_shape);
  check(decoder_ || state_dim_ == latent_dim, ErrorCode::kShapeMismatch,
        "without a decoder the latent ({}) must be the state ({})", latent_dim, state_dim_);
  auto idx = std::make_shared<std::vector<std::size_t>>();
  std::vector<double> y, var;
  for (std::size_t t = 0; t < set.length(); ++t) {
    const auto& s = set.steps[t];
    for (std::size_t i = 0; i < s.indices.size(); ++i) {
      idx->push_back(t * state_dim_ + s.indices[i]);
      y.push_back(s.values[i]);
      var.push_back(s.noise_std[i] * s.noise_std[i]);
    }
  }
  indices_ = idx;
  y_ = Tensor({y.size()}, y);
  noise_var_ = Tensor({var.size()}, var);
}

LatentObservationOperator LatentObservationOperator::pins(std::size_t length, std::size_t latent_dim,
                                                          const std::vector<std::size_t>& rows,
                                                          const Tensor& latents) {
  check(latents.size() == rows.size() * latent_dim, ErrorCode::kShapeMismatch, "{} pinned rows need {} values, got {}",
        rows.size(), rows.size() * latent_dim, latents.size());
  LatentObservationOperator op;
  op.length_ = length;
  op.latent_dim_ = latent_dim;
  op.state_dim_ = latent_dim;
  auto idx = std::make_shared<std::vector<std::size_t>>();
  for (std::size_t r : rows) {
    check(r < length, ErrorCode::kShapeMismatch, "pinned row {} outside a trajectory of {}", r, length);
    for (std::size_t k = 0; k < latent_dim; ++k) idx->push_back(r * latent_dim + k);
  }
  op.indices_ = idx;
  op.y_ = latents.reshaped({latents.size()});
  op.noise_var_ = Tensor({latents.size()});
  return op;
}

ad::Var LatentObservationOperator::apply(ad::Graph&, ad::Var z) const {
  check(z.shape() == Shape{length_, latent_dim_}, ErrorCode::kShapeMismatch,
        "observation operator expects [{}, {}] latents, got {}", length_, latent_dim_, shape_string(z.shape()));
  ad::Var states = decoder_ ? decoder_(z) : z;
  check(states.shape() == Shape{length_, state_dim_}, ErrorCode::kShapeMismatch,
        "decoder produced {}, expected [{}, {}]", shape_string(states.shape()), length_, state_dim_);
  return ad::gather(states, indices_, {indices_->size()});
}

Tensor LatentObservationOperator::apply(const Tensor& z) const {
  ad::Graph g;
  return apply(g, g.constant(z)).value();
}

}  // namespace appa::obs
