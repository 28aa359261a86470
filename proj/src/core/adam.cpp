// Copyright 2026 The Appa Toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "core/adam.hpp"

#include <cmath>

#include "core/error.hpp"

namespace appa {

AdamState AdamState::for_params(const std::vector<Tensor>& params, double lr) {
  AdamState state;
  state.lr = lr;
  for (const Tensor& p : params) {
    state.m.emplace_back(p.shape());
    state.v.emplace_back(p.shape());
  }
  return state;
}

void adam_step(AdamState& state, const std::vector<Tensor>& grads, std::vector<Tensor>& params,
               double lr_factor) {
  check(grads.size() == params.size() && state.m.size() == params.size() && state.v.size() == params.size(),
        ErrorCode::kShapeMismatch, "adam: {} params, {} grads, {} moments", params.size(), grads.size(),
        state.m.size());
  for (std::size_t k = 0; k < params.size(); ++k) {
    require_same_shape(params[k], grads[k], "adam gradient");
    require_same_shape(params[k], state.m[k], "adam moment");
  }
  ++state.step;
  const double lr = state.lr * lr_factor;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k].data();
    auto g = grads[k].data();
    auto m = state.m[k].data();
    auto v = state.v[k].data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + state.eps);
    }
  }
}

}  // namespace appa
