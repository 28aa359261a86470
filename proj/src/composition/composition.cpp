// Copyright 2026 The Appa Toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "composition/composition.hpp"

#include <algorithm>
#include <map>

#include "core/error.hpp"
#include "core/parallel.hpp"

namespace appa::composition {

std::vector<std::size_t> CompositionPlan::window_starts() const {
  std::vector<std::size_t> out;
  for (const Segment& s : segments)
    if (out.empty() || out.back() != s.window_start) out.push_back(s.window_start);
  return out;
}

CompositionPlan make_plan(std::size_t window, std::size_t stride, std::size_t length) {
  check(window >= 1 && stride >= 1, ErrorCode::kConfig, "window ({}) and stride ({}) must be positive", window,
        stride);
  check(window <= length, ErrorCode::kConfig, "window {} is longer than the trajectory ({})", window, length);
  check(stride <= window, ErrorCode::kConfig, "stride {} exceeds the window {}", stride, window);
  check((window - stride) % 2 == 0, ErrorCode::kConfig,
        "window - stride must be even so each window keeps a symmetric margin (window {}, stride {})", window,
        stride);
  check((length - window) % stride == 0, ErrorCode::kConfig,
        "length - window must be a multiple of the stride so the last window ends at the trajectory end "
        "(length {}, window {}, stride {})",
        length, window, stride);
  CompositionPlan plan{window, stride, length, {}};
  if (window == length) {
    plan.segments.push_back({0, 0, window, 0, window});
    return plan;
  }
  const std::size_t a = (window - stride) / 2, b = a + stride;
  const std::size_t last = length - window;
  auto add = [&](std::size_t start, std::size_t from, std::size_t to) {
    if (to > from) plan.segments.push_back({start, from, to, start + from, start + to});
  };
  add(0, 0, a);
  for (std::size_t start = 0; start <= last; start += stride) add(start, a, b);
  add(last, b, window);
  return plan;
}

ComposedDenoiser::ComposedDenoiser(const diffusion::Denoiser& inner, CompositionPlan plan)
    : inner_(inner), plan_(std::move(plan)) {
  check(inner.window() == 0 || inner.window() == plan_.window, ErrorCode::kConfig,
        "plan window {} does not match the denoiser window {}", plan_.window, inner.window());
}

ad::Var ComposedDenoiser::denoise(ad::Graph& g, ad::Var z, double sigma, std::int64_t t0) const {
  check(z.shape() == Shape{plan_.length, step_dim()}, ErrorCode::kShapeMismatch,
        "composed denoiser expects [{}, {}], got {}", plan_.length, step_dim(), shape_string(z.shape()));
  std::map<std::size_t, ad::Var> outputs;
  std::vector<ad::Var> parts;
  for (const Segment& s : plan_.segments) {
    auto it = outputs.find(s.window_start);
    if (it == outputs.end()) {
      ad::Var window = ad::slice_rows(z, s.window_start, s.window_start + plan_.window);
      it = outputs
               .emplace(s.window_start,
                        inner_.denoise(g, window, sigma, t0 + static_cast<std::int64_t>(s.window_start)))
               .first;
    }
    parts.push_back(ad::slice_rows(it->second, s.source_begin, s.source_end));
  }
  return ad::concat(parts, 0);
}

Tensor ComposedDenoiser::denoise_parallel(const Tensor& z, double sigma, std::int64_t t0, std::size_t threads) const {
  check(z.shape() == Shape{plan_.length, step_dim()}, ErrorCode::kShapeMismatch,
        "composed denoiser expects [{}, {}], got {}", plan_.length, step_dim(), shape_string(z.shape()));
  const std::vector<std::size_t> starts = plan_.window_starts();
  std::vector<Tensor> outputs(starts.size());
  parallel_for(starts.size(), threads, [&](std::size_t i) {
    outputs[i] = inner_.denoise(z.slice_rows(starts[i], starts[i] + plan_.window), sigma,
                                t0 + static_cast<std::int64_t>(starts[i]));
  });
  Tensor out(z.shape());
  const std::size_t d = step_dim();
  for (const Segment& s : plan_.segments) {
    const std::size_t i = static_cast<std::size_t>(std::find(starts.begin(), starts.end(), s.window_start) -
                                                   starts.begin());
    std::copy(outputs[i].data().begin() + static_cast<long>(s.source_begin * d),
              outputs[i].data().begin() + static_cast<long>(s.source_end * d),
              out.data().begin() + static_cast<long>(s.dest_begin * d));
  }
  return out;
}

Tensor composed_denoise(const diffusion::Denoiser& denoiser, const Tensor& z, double sigma,
                        const CompositionPlan& plan, std::int64_t t0) {
  return ComposedDenoiser(denoiser, plan).denoise(z, sigma, t0);
}

Tensor composed_score(const diffusion::Denoiser& denoiser, const Tensor& z, double sigma,
                      const CompositionPlan& plan, std::int64_t t0) {
  check(sigma > 0.0, ErrorCode::kInvalidArgument, "score needs sigma > 0");
  return diffusion::score_from_denoised(composed_denoise(denoiser, z, sigma, plan, t0), z, sigma);
}

}  // namespace appa::composition
