// Copyright 2026 The Appa Toy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "core/adam.hpp"
#include "core/container.hpp"
#include "core/params.hpp"

namespace appa {

/// Everything needed to resume an optimization: parameters, Adam moments
/// and the loss history.
struct TrainState {
  ParamSet params;
  AdamState adam;
  std::vector<double> losses;

  void store(Container& out, const std::string& prefix) const;
  static TrainState load(const Container& in, const std::string& prefix);
};

/// Loss of one micro-batch; must fill `grads` (shaped like the params) with
/// the gradient of the returned loss.
using ChunkLoss = std::function<double(std::size_t chunk, std::vector<Tensor>& grads)>;

/// Mean loss and mean gradient over `chunks` micro-batches. The micro-batch
/// split is fixed by the caller and partial results are summed in chunk
/// order, so the result does not depend on `threads`.
double accumulate_gradients(std::size_t chunks, std::size_t threads, const ParamSet& params,
                            const ChunkLoss& loss, std::vector<Tensor>& grads);

/// Runs Adam from state.adam.step up to `steps`. step_loss(step, grads)
/// returns the loss and fills the gradient. A non-finite loss raises a
/// numerical error naming the step. on_step (optional) runs after each
/// update, e.g. for checkpointing. With `cosine` the step size follows a
/// half cosine from lr down to zero at `steps`.
void run_adam(TrainState& state, std::size_t steps,
              const std::function<double(std::uint64_t step, std::vector<Tensor>& grads)>& step_loss,
              const std::function<void(const TrainState&)>& on_step = {}, bool cosine = false);

}  // namespace appa
