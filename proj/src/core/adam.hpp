// Copyright 2026 The Appa Toy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "core/tensor.hpp"

namespace appa {

struct AdamState {
  std::uint64_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  /// Zero moments shaped like `params`.
  static AdamState for_params(const std::vector<Tensor>& params, double lr);
};

/// One bias-corrected Adam update of `params` in place, with step size
/// state.lr * lr_factor.
void adam_step(AdamState& state, const std::vector<Tensor>& grads, std::vector<Tensor>& params,
               double lr_factor = 1.0);

}  // namespace appa
