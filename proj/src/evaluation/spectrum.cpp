// Copyright 2026 The Appa Toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "evaluation/spectrum.hpp"

#include <algorithm>
#include <cmath>

#include "core/error.hpp"
#include "core/fft.hpp"

namespace appa::eval {

namespace {

std::vector<double> spectrum_with(const Fft2& fft, std::span<const double> field) {
  const std::size_t h = fft.height(), w = fft.width(), hw = fft.half_width();
  const auto spec = fft.forward(field);
  const std::size_t bins = std::min(h, w) / 2;
  std::vector<double> power(bins, 0.0), count(bins, 0.0);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < hw; ++c) {
      // Columns other than 0 and the Nyquist column stand for two modes.
      const double weight = (c == 0 || (w % 2 == 0 && c == w / 2)) ? 1.0 : 2.0;
      const double ky = static_cast<double>(signed_frequency(r, h));
      const auto k = static_cast<std::size_t>(std::lround(std::hypot(ky, static_cast<double>(c))));
      if (k == 0 || k > bins) continue;
      power[k - 1] += weight * std::norm(spec[r * hw + c]);
      count[k - 1] += weight;
    }
  for (std::size_t k = 0; k < bins; ++k) power[k] /= count[k] * static_cast<double>(h * w);
  return power;
}

}  // namespace

std::vector<double> isotropic_spectrum(const double* field, std::size_t h, std::size_t w) {
  const Fft2 fft(h, w);
  return spectrum_with(fft, std::span<const double>(field, h * w));
}

double percentile(std::vector<double> values, double q) {
  check(!values.empty(), ErrorCode::kInvalidArgument, "percentile of no values");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

SpectrumBands psd(const Tensor& fields, bool periodic) {
  check(periodic, ErrorCode::kInvalidArgument, "power spectra need a periodic grid");
  check(fields.rank() >= 3, ErrorCode::kShapeMismatch, "psd needs [..., H, W, C], got {}",
        shape_string(fields.shape()));
  const Shape& s = fields.shape();
  const std::size_t h = s[s.size() - 3], w = s[s.size() - 2], c = s.back();
  check(std::min(h, w) >= 2, ErrorCode::kInvalidArgument, "psd needs a grid of at least 2x2, got {}x{}", h, w);
  const std::size_t samples = fields.size() / (h * w * c);
  const std::size_t bins = std::min(h, w) / 2;
  std::vector<std::vector<double>> per_bin(bins);
  const Fft2 fft(h, w);
  std::vector<double> field(h * w);
  for (std::size_t i = 0; i < samples; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t p = 0; p < h * w; ++p) field[p] = fields[(i * h * w + p) * c + ch];
      const auto spectrum = spectrum_with(fft, field);
      for (std::size_t k = 0; k < bins; ++k) per_bin[k].push_back(spectrum[k]);
    }
  SpectrumBands out;
  for (std::size_t k = 0; k < bins; ++k) {
    out.wavenumber.push_back(static_cast<double>(k + 1));
    out.median.push_back(percentile(per_bin[k], 50.0));
    out.p5.push_back(percentile(per_bin[k], 5.0));
    out.p95.push_back(percentile(per_bin[k], 95.0));
  }
  return out;
}

}  // namespace appa::eval
