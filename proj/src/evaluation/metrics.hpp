// Copyright 2026 The Appa Toy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace appa::eval {

/// K ensembles of M members. members is [K, M, ...], truth is [K, ...] with
/// the same trailing shape. Metrics pool every trailing point.
struct Ensemble {
  Tensor members;
  Tensor truth;

  std::size_t groups() const { return members.dim(0); }
  std::size_t size() const { return members.dim(1); }
  /// Values per member (product of trailing dims).
  std::size_t points() const;
  void validate() const;
};

/// Sub-ensemble at one lead (axis 2 of members) and one channel (last axis),
/// for members shaped [K, M, L, ..., C].
Ensemble select(const Ensemble& ens, std::size_t lead, std::size_t channel);

/// RMSE of the ensemble mean.
double skill(const Ensemble& ens);
/// Square root of the mean unbiased (M - 1) ensemble variance.
double spread(const Ensemble& ens);
/// sqrt((M + 1) / M) * spread / skill.
double spread_skill_ratio(const Ensemble& ens);
/// Fair CRPS with point-averaged L1 distances. The pairwise term is 0 for
/// M = 1 so that the score equals the MAE.
double crps(const Ensemble& ens);
/// Mean absolute error of the ensemble mean.
double mae(const Ensemble& ens);

struct MetricRow {
  std::size_t lead = 0;
  std::size_t channel = 0;
  double skill = 0.0;
  std::optional<double> spread;
  std::optional<double> ratio;
  double crps = 0.0;
};

/// Every metric per (lead, channel). Spread and ratio are absent for M = 1
/// or zero skill.
std::vector<MetricRow> metric_table(const Ensemble& ens);

}  // namespace appa::eval
