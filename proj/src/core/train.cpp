// Copyright 2026 The Appa Toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "core/train.hpp"

#include <cmath>
#include <numbers>

#include "core/error.hpp"
#include "core/parallel.hpp"

namespace appa {

void TrainState::store(Container& out, const std::string& prefix) const {
  params.store(out, prefix + "param/");
  for (std::size_t i = 0; i < adam.m.size(); ++i) {
    out.add(prefix + "adam_m/" + params.names()[i], adam.m[i]);
    out.add(prefix + "adam_v/" + params.names()[i], adam.v[i]);
  }
  out.add(prefix + "losses", Tensor({losses.size()}, losses));
  out.meta[prefix + "adam"] = {{"step", adam.step}, {"lr", adam.lr}, {"beta1", adam.beta1},
                               {"beta2", adam.beta2}, {"eps", adam.eps}};
}

TrainState TrainState::load(const Container& in, const std::string& prefix) {
  TrainState s;
  s.params = ParamSet::load(in, prefix + "param/");
  check(s.params.size() > 0, ErrorCode::kHeaderMismatch, "no parameters under '{}'", prefix);
  const auto& meta = in.meta.at(prefix + "adam");
  s.adam.step = meta.at("step").get<std::uint64_t>();
  s.adam.lr = meta.at("lr").get<double>();
  s.adam.beta1 = meta.at("beta1").get<double>();
  s.adam.beta2 = meta.at("beta2").get<double>();
  s.adam.eps = meta.at("eps").get<double>();
  for (const auto& name : s.params.names()) {
    s.adam.m.push_back(in.tensor(prefix + "adam_m/" + name));
    s.adam.v.push_back(in.tensor(prefix + "adam_v/" + name));
  }
  const auto& l = in.tensor(prefix + "losses").values();
  s.losses.assign(l.begin(), l.end());
  return s;
}

double accumulate_gradients(std::size_t chunks, std::size_t threads, const ParamSet& params,
                            const ChunkLoss& loss, std::vector<Tensor>& grads) {
  check(chunks >= 1, ErrorCode::kInvalidArgument, "no micro-batches");
  std::vector<std::vector<Tensor>> parts(chunks);
  std::vector<double> losses(chunks);
  parallel_for(chunks, threads, [&](std::size_t c) {
    parts[c].reserve(params.size());
    for (const Tensor& p : params.values()) parts[c].emplace_back(p.shape());
    losses[c] = loss(c, parts[c]);
  });
  grads = std::move(parts[0]);
  double total = losses[0];
  for (std::size_t c = 1; c < chunks; ++c) {
    total += losses[c];
    for (std::size_t k = 0; k < grads.size(); ++k) grads[k] += parts[c][k];
  }
  const double inv = 1.0 / static_cast<double>(chunks);
  for (Tensor& g : grads) g *= inv;
  return total * inv;
}

void run_adam(TrainState& state, std::size_t steps,
              const std::function<double(std::uint64_t step, std::vector<Tensor>& grads)>& step_loss,
              const std::function<void(const TrainState&)>& on_step, bool cosine) {
  std::vector<Tensor> grads;
  while (state.adam.step < steps) {
    const std::uint64_t step = state.adam.step;
    const double loss = step_loss(step, grads);
    check(std::isfinite(loss), ErrorCode::kNumerical, "training diverged at step {} (loss {})", step, loss);
    for (const Tensor& g : grads)
      check(g.all_finite(), ErrorCode::kNumerical, "non-finite gradient at step {}", step);
    const double factor =
        cosine ? 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(steps))) : 1.0;
    adam_step(state.adam, grads, state.params.values(), factor);
    state.losses.push_back(loss);
    if (on_step) on_step(state);
  }
}

}  // namespace appa
