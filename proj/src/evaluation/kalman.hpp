// Copyright 2026 The Appa Toy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <vector>

#include "core/tensor.hpp"
#include "systems/systems.hpp"

namespace appa::eval {

/// Linear observations y_i = H_i x_i + e_i, e_i ~ N(0, R_i). A step without
/// observations has a [0, n] operator.
struct LinearObservations {
  std::vector<Tensor> operators;   // [m_i, n]
  std::vector<Tensor> values;      // [m_i]
  std::vector<Tensor> noise_cov;   // [m_i, m_i]

  std::size_t length() const { return operators.size(); }
  /// Steps with no observation at all.
  static LinearObservations none(std::size_t length, std::size_t state_size);
};

struct OracleResult {
  std::vector<Tensor> filter_means;  // [n] per step
  std::vector<Tensor> filter_covs;   // [n, n]
  std::vector<Tensor> means;         // smoothed
  std::vector<Tensor> covs;
};

/// Kalman filter then RTS smoother for a linear-Gaussian system whose first
/// state is N(m0, p0).
OracleResult kalman_smoother(const systems::SystemSpec& spec, const LinearObservations& obs, const Tensor& m0,
                             const Tensor& p0);
/// Same with the stationary prior (zero mean, stationary covariance).
OracleResult kalman_smoother(const systems::SystemSpec& spec, const LinearObservations& obs);

/// Joint Gaussian prior over x^{1:L} stacked as one [L n] vector.
struct JointGaussian {
  Tensor mean;  // [L n]
  Tensor cov;   // [L n, L n]
};

JointGaussian joint_prior(const systems::SystemSpec& spec, std::size_t length, const Tensor& m0, const Tensor& p0);
/// Dense conditioning of the joint prior on the observations.
JointGaussian joint_posterior(const JointGaussian& prior, const LinearObservations& obs);

}  // namespace appa::eval
