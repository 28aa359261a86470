// Copyright 2026 The Appa Toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "core/fft.hpp"

#include <mutex>

#include <fftw3.h>

#include "core/error.hpp"

namespace appa {
namespace {

// FFTW planning is not thread-safe; execution with new-array calls is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

Fft2::Fft2(std::size_t h, std::size_t w) : h_(h), w_(w) {
  check(h >= 1 && w >= 1, ErrorCode::kInvalidArgument, "fft grid {}x{}", h, w);
  std::vector<double> real(h * w);
  std::vector<fftw_complex> spec(h * (w / 2 + 1));
  std::lock_guard lock(planner_mutex());
  forward_plan_ = fftw_plan_dft_r2c_2d(static_cast<int>(h), static_cast<int>(w), real.data(), spec.data(),
                                       FFTW_ESTIMATE);
  inverse_plan_ = fftw_plan_dft_c2r_2d(static_cast<int>(h), static_cast<int>(w), spec.data(), real.data(),
                                       FFTW_ESTIMATE);
}

Fft2::~Fft2() {
  std::lock_guard lock(planner_mutex());
  fftw_destroy_plan(static_cast<fftw_plan>(forward_plan_));
  fftw_destroy_plan(static_cast<fftw_plan>(inverse_plan_));
}

std::vector<std::complex<double>> Fft2::forward(std::span<const double> field) const {
  check(field.size() == h_ * w_, ErrorCode::kShapeMismatch, "fft input of {} values for a {}x{} grid",
        field.size(), h_, w_);
  std::vector<double> in(field.begin(), field.end());
  std::vector<std::complex<double>> out(h_ * half_width());
  fftw_execute_dft_r2c(static_cast<fftw_plan>(forward_plan_), in.data(),
                       reinterpret_cast<fftw_complex*>(out.data()));
  return out;
}

std::vector<double> Fft2::inverse(std::span<const std::complex<double>> spectrum) const {
  check(spectrum.size() == h_ * half_width(), ErrorCode::kShapeMismatch, "inverse fft of {} bins", spectrum.size());
  // c2r destroys its input.
  std::vector<std::complex<double>> in(spectrum.begin(), spectrum.end());
  std::vector<double> out(h_ * w_);
  fftw_execute_dft_c2r(static_cast<fftw_plan>(inverse_plan_), reinterpret_cast<fftw_complex*>(in.data()),
                       out.data());
  const double scale = 1.0 / static_cast<double>(h_ * w_);
  for (double& v : out) v *= scale;
  return out;
}

}  // namespace appa
