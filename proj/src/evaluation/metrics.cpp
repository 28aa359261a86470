// Copyright 2026 The Appa Toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "evaluation/metrics.hpp"

#include <cmath>

#include "core/error.hpp"

namespace appa::eval {

std::size_t Ensemble::points() const {
  return members.rank() < 2 || members.dim(0) * members.dim(1) == 0
             ? 0
             : members.size() / (members.dim(0) * members.dim(1));
}

void Ensemble::validate() const {
  check(members.rank() >= 2, ErrorCode::kShapeMismatch, "members must be [K, M, ...], got {}",
        shape_string(members.shape()));
  check(members.dim(0) >= 1 && members.dim(1) >= 1 && points() >= 1, ErrorCode::kInvalidArgument,
        "empty ensemble {}", shape_string(members.shape()));
  Shape expected{members.dim(0)};
  expected.insert(expected.end(), members.shape().begin() + 2, members.shape().end());
  check(truth.shape() == expected, ErrorCode::kShapeMismatch, "truth {} does not match members {}",
        shape_string(truth.shape()), shape_string(members.shape()));
}

Ensemble select(const Ensemble& ens, std::size_t lead, std::size_t channel) {
  ens.validate();
  const Shape& s = ens.members.shape();
  check(s.size() >= 4, ErrorCode::kShapeMismatch, "select needs [K, M, L, ..., C], got {}", shape_string(s));
  const std::size_t k = s[0], m = s[1], l = s[2], c = s.back();
  check(lead < l && channel < c, ErrorCode::kInvalidArgument, "lead {} / channel {} out of range", lead, channel);
  const std::size_t per_lead = ens.points() / l;
  const std::size_t spatial = per_lead / c;
  Ensemble out{Tensor({k, m, spatial}), Tensor({k, spatial})};
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = 0; b < m; ++b)
      for (std::size_t p = 0; p < spatial; ++p)
        out.members[(a * m + b) * spatial + p] = ens.members[((a * m + b) * l + lead) * per_lead + p * c + channel];
    for (std::size_t p = 0; p < spatial; ++p)
      out.truth[a * spatial + p] = ens.truth[(a * l + lead) * per_lead + p * c + channel];
  }
  return out;
}

namespace {

// Ensemble mean of group k at point p, updated incrementally so identical
// members return their value exactly.
double member_mean(const Ensemble& ens, std::size_t k, std::size_t p) {
  const std::size_t m = ens.size(), n = ens.points();
  double mu = 0.0;
  for (std::size_t j = 0; j < m; ++j) mu += (ens.members[(k * m + j) * n + p] - mu) / static_cast<double>(j + 1);
  return mu;
}

}  // namespace

double skill(const Ensemble& ens) {
  ens.validate();
  const std::size_t n = ens.points();
  double acc = 0.0;
  for (std::size_t k = 0; k < ens.groups(); ++k)
    for (std::size_t p = 0; p < n; ++p) {
      const double d = ens.truth[k * n + p] - member_mean(ens, k, p);
      acc += d * d;
    }
  return std::sqrt(acc / static_cast<double>(ens.groups() * n));
}

double mae(const Ensemble& ens) {
  ens.validate();
  const std::size_t n = ens.points();
  // Accumulated in the same order as crps() so that M = 1 agrees bitwise.
  double total = 0.0;
  for (std::size_t k = 0; k < ens.groups(); ++k) {
    double l1 = 0.0;
    for (std::size_t p = 0; p < n; ++p) l1 += std::abs(member_mean(ens, k, p) - ens.truth[k * n + p]);
    total += l1 / static_cast<double>(n);
  }
  return total / static_cast<double>(ens.groups());
}

double spread(const Ensemble& ens) {
  ens.validate();
  const std::size_t m = ens.size(), n = ens.points();
  check(m >= 2, ErrorCode::kInvalidArgument, "spread needs at least 2 members, got {}", m);
  double acc = 0.0;
  for (std::size_t k = 0; k < ens.groups(); ++k)
    for (std::size_t p = 0; p < n; ++p) {
      const double mu = member_mean(ens, k, p);
      double var = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        const double d = ens.members[(k * m + j) * n + p] - mu;
        var += d * d;
      }
      acc += var / static_cast<double>(m - 1);
    }
  return std::sqrt(acc / static_cast<double>(ens.groups() * n));
}

double spread_skill_ratio(const Ensemble& ens) {
  const double sk = skill(ens);
  check(sk > 0.0, ErrorCode::kNumerical, "spread-skill ratio undefined for zero skill");
  const double m = static_cast<double>(ens.size());
  return std::sqrt((m + 1.0) / m) * spread(ens) / sk;
}

double crps(const Ensemble& ens) {
  ens.validate();
  const std::size_t m = ens.size(), n = ens.points();
  const double dn = static_cast<double>(n);
  double total = 0.0;
  for (std::size_t k = 0; k < ens.groups(); ++k) {
    const double* x = ens.members.data().data() + k * m * n;
    const double* y = ens.truth.data().data() + k * n;
    double first = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      double l1 = 0.0;
      for (std::size_t p = 0; p < n; ++p) l1 += std::abs(x[j * n + p] - y[p]);
      first += l1 / dn;
    }
    first /= static_cast<double>(m);
    double second = 0.0;
    if (m > 1) {
      for (std::size_t a = 0; a < m; ++a)
        for (std::size_t b = a + 1; b < m; ++b) {
          double l1 = 0.0;
          for (std::size_t p = 0; p < n; ++p) l1 += std::abs(x[a * n + p] - x[b * n + p]);
          second += 2.0 * l1 / dn;
        }
      second /= 2.0 * static_cast<double>(m) * static_cast<double>(m - 1);
    }
    total += first - second;
  }
  return total / static_cast<double>(ens.groups());
}

std::vector<MetricRow> metric_table(const Ensemble& ens) {
  ens.validate();
  const std::size_t leads = ens.members.dim(2);
  const std::size_t channels = ens.members.shape().back();
  std::vector<MetricRow> rows;
  for (std::size_t l = 0; l < leads; ++l)
    for (std::size_t c = 0; c < channels; ++c) {
      const Ensemble sub = select(ens, l, c);
      MetricRow row{l, c, skill(sub), std::nullopt, std::nullopt, crps(sub)};
      if (sub.size() >= 2) {
        row.spread = spread(sub);
        if (row.skill > 0.0) row.ratio = spread_skill_ratio(sub);
      }
      rows.push_back(row);
    }
  return rows;
}

}  // namespace appa::eval
