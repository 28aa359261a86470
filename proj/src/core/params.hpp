// Copyright 2026 The Appa Toy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "core/autodiff.hpp"
#include "core/container.hpp"

namespace appa {

/// Named parameter tensors of a network.
class ParamSet {
 public:
  void add(std::string name, Tensor value);
  std::size_t index(std::string_view name) const;
  const Tensor& at(std::string_view name) const { return values_[index(name)]; }

  std::vector<Tensor>& values() { return values_; }
  const std::vector<Tensor>& values() const { return values_; }
  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return values_.size(); }
  std::size_t count() const;

  /// Writes "<prefix><name>" tensors.
  void store(Container& out, std::string_view prefix) const;
  /// Reads back every parameter stored under `prefix`, in stored order.
  static ParamSet load(const Container& in, std::string_view prefix);

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
};

/// Parameters of a ParamSet placed on one graph.
class BoundParams {
 public:
  BoundParams(ad::Graph& graph, const ParamSet& params, bool trainable);

  ad::Var operator[](std::string_view name) const { return vars_[params_->index(name)]; }
  const std::vector<ad::Var>& vars() const { return vars_; }

 private:
  const ParamSet* params_;
  std::vector<ad::Var> vars_;
};

/// Glorot-uniform initialization for a [fan_in, fan_out] weight (extra
/// leading dims count towards fan_in).
Tensor glorot(const Shape& shape, std::mt19937_64& rng);

}  // namespace appa
