// Copyright 2026 The Appa Toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "core/params.hpp"

#include <cmath>

#include "core/error.hpp"

namespace appa {

void ParamSet::add(std::string name, Tensor value) {
  for (const auto& n : names_)
    check(n != name, ErrorCode::kInvalidArgument, "duplicate parameter '{}'", name);
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
}

std::size_t ParamSet::index(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return i;
  fail(ErrorCode::kInvalidArgument, "unknown parameter '{}'", name);
}

std::size_t ParamSet::count() const {
  std::size_t n = 0;
  for (const Tensor& t : values_) n += t.size();
  return n;
}

void ParamSet::store(Container& out, std::string_view prefix) const {
  for (std::size_t i = 0; i < names_.size(); ++i) out.add(std::string(prefix) + names_[i], values_[i]);
}

ParamSet ParamSet::load(const Container& in, std::string_view prefix) {
  ParamSet out;
  for (const auto& [name, t] : in.tensors)
    if (name.starts_with(prefix)) out.add(name.substr(prefix.size()), t);
  return out;
}

BoundParams::BoundParams(ad::Graph& graph, const ParamSet& params, bool trainable) : params_(&params) {
  vars_.reserve(params.size());
  for (const Tensor& t : params.values()) vars_.push_back(trainable ? graph.input(t) : graph.constant(t));
}

Tensor glorot(const Shape& shape, std::mt19937_64& rng) {
  check(shape.size() >= 2, ErrorCode::kShapeMismatch, "glorot needs rank >= 2, got {}", shape_string(shape));
  const std::size_t fan_out = shape.back();
  const std::size_t fan_in = numel(shape) / fan_out;
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> uniform(-limit, limit);
  Tensor out(shape);
  for (double& v : out.data()) v = uniform(rng);
  return out;
}

}  // namespace appa
