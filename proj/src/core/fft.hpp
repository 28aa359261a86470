// Copyright 2026 The Appa Toy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace appa {

/// Real 2-D FFT on an h x w row-major grid (FFTW r2c/c2r). The half spectrum
/// has h x (w/2 + 1) entries. inverse() is normalized so that
/// inverse(forward(x)) == x.
class Fft2 {
 public:
  Fft2(std::size_t h, std::size_t w);
  ~Fft2();
  Fft2(const Fft2&) = delete;
  Fft2& operator=(const Fft2&) = delete;

  std::size_t height() const { return h_; }
  std::size_t width() const { return w_; }
  std::size_t half_width() const { return w_ / 2 + 1; }

  std::vector<std::complex<double>> forward(std::span<const double> field) const;
  std::vector<double> inverse(std::span<const std::complex<double>> spectrum) const;

 private:
  std::size_t h_, w_;
  void* forward_plan_ = nullptr;
  void* inverse_plan_ = nullptr;
};

/// Signed integer frequency of FFT bin i on an axis of length n.
inline long signed_frequency(std::size_t i, std::size_t n) {
  return i <= n / 2 ? static_cast<long>(i) : static_cast<long>(i) - static_cast<long>(n);
}

}  // namespace appa
