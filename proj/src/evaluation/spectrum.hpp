// Copyright 2026 The Appa Toy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <vector>

#include "core/tensor.hpp"

namespace appa::eval {

/// Isotropic power spectrum of one periodic h x w field. Bin k collects the
/// modes with round(|k|) == k for k = 1 .. min(h, w) / 2 and holds their mean
/// power |F|^2 / (h w), so unit white noise is flat at 1.
std::vector<double> isotropic_spectrum(const double* field, std::size_t h, std::size_t w);

struct SpectrumBands {
  std::vector<double> wavenumber;
  std::vector<double> median;
  std::vector<double> p5;
  std::vector<double> p95;
};

/// Spectra of every [h, w] field of `fields` ([..., H, W, C]; each leading
/// index and channel is one sample) summarized by median and 5/95th
/// percentiles per bin. Only periodic grids are meaningful.
SpectrumBands psd(const Tensor& fields, bool periodic = true);

/// Linear-interpolated percentile (q in [0, 100]).
double percentile(std::vector<double> values, double q);

}  // namespace appa::eval
