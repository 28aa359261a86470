// Copyright 2026 The Appa Toy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "diffusion/diffusion.hpp"

/// Stitching a fixed-window denoiser into a trajectory-length one.
///
/// Windows start at 0, stride, 2 stride, ..., L - W. With a = (W - stride) / 2
/// and b = a + stride, the first window supplies rows [0, a), every window
/// supplies its rows [a, b) and the last window supplies [b, W). Indices are
/// 0-based and half-open.
namespace appa::composition {

struct Segment {
  std::size_t window_start = 0;
  std::size_t source_begin = 0;  // rows within the window
  std::size_t source_end = 0;
  std::size_t dest_begin = 0;  // rows within the trajectory
  std::size_t dest_end = 0;
};

struct CompositionPlan {
  std::size_t window = 0;
  std::size_t stride = 0;
  std::size_t length = 0;
  /// Ordered by destination; destinations tile [0, length).
  std::vector<Segment> segments;

  std::vector<std::size_t> window_starts() const;
  /// Window evaluations per composed call.
  std::size_t calls() const { return window_starts().size(); }
};

/// Throws kConfig naming the violated constraint.
CompositionPlan make_plan(std::size_t window, std::size_t stride, std::size_t length);

/// Trajectory-length denoiser built from a window denoiser. Holds a
/// reference to `inner`, which must outlive it.
class ComposedDenoiser final : public diffusion::Denoiser {
 public:
  ComposedDenoiser(const diffusion::Denoiser& inner, CompositionPlan plan);

  std::size_t window() const override { return plan_.length; }
  std::size_t step_dim() const override { return inner_.step_dim(); }
  ad::Var denoise(ad::Graph& g, ad::Var z, double sigma, std::int64_t t0) const override;
  using Denoiser::denoise;

  /// Same values as denoise(), with window evaluations spread over threads.
  Tensor denoise_parallel(const Tensor& z, double sigma, std::int64_t t0, std::size_t threads) const;

  const CompositionPlan& plan() const { return plan_; }
  const diffusion::Denoiser& inner() const { return inner_; }

 private:
  const diffusion::Denoiser& inner_;
  CompositionPlan plan_;
};

Tensor composed_denoise(const diffusion::Denoiser& denoiser, const Tensor& z, double sigma,
                        const CompositionPlan& plan, std::int64_t t0 = 0);
Tensor composed_score(const diffusion::Denoiser& denoiser, const Tensor& z, double sigma,
                      const CompositionPlan& plan, std::int64_t t0 = 0);

}  // namespace appa::composition
