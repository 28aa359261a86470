// Copyright 2026 The Appa Toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "evaluation/kalman.hpp"

#include <Eigen/Dense>

#include "core/error.hpp"

namespace appa::eval {
namespace {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

Matrix to_matrix(const Tensor& t) {
  check(t.rank() == 2, ErrorCode::kShapeMismatch, "expected a matrix, got {}", shape_string(t.shape()));
  Matrix m(static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1)));
  std::copy(t.data().begin(), t.data().end(), m.data());
  return m;
}

Vec to_vec(const Tensor& t) {
  Vec v(static_cast<Eigen::Index>(t.size()));
  std::copy(t.data().begin(), t.data().end(), v.data());
  return v;
}

Tensor from_matrix(const Matrix& m) {
  Tensor out({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  std::copy(m.data(), m.data() + m.size(), out.data().begin());
  return out;
}

Tensor from_vec(const Vec& v) {
  Tensor out({static_cast<std::size_t>(v.size())});
  std::copy(v.data(), v.data() + v.size(), out.data().begin());
  return out;
}

Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

void check_observations(const LinearObservations& obs, std::size_t n) {
  check(obs.values.size() == obs.length() && obs.noise_cov.size() == obs.length(), ErrorCode::kShapeMismatch,
        "observation lists disagree in length");
  for (std::size_t i = 0; i < obs.length(); ++i) {
    const std::size_t m = obs.operators[i].rank() == 2 ? obs.operators[i].dim(0) : 0;
    check(obs.operators[i].shape() == Shape{m, n}, ErrorCode::kShapeMismatch, "operator {} at step {}",
          shape_string(obs.operators[i].shape()), i);
    check(obs.values[i].size() == m && obs.noise_cov[i].shape() == Shape{m, m}, ErrorCode::kShapeMismatch,
          "observation values/noise at step {} do not match {} rows", i, m);
  }
}

}  // namespace

LinearObservations LinearObservations::none(std::size_t length, std::size_t state_size) {
  LinearObservations obs;
  for (std::size_t i = 0; i < length; ++i) {
    obs.operators.emplace_back(Shape{0, state_size});
    obs.values.emplace_back(Shape{0});
    obs.noise_cov.emplace_back(Shape{0, 0});
  }
  return obs;
}

OracleResult kalman_smoother(const systems::SystemSpec& spec, const LinearObservations& obs, const Tensor& m0,
                             const Tensor& p0) {
  check(spec.kind == systems::SystemKind::kLinearGaussian, ErrorCode::kInvalidArgument,
        "the Kalman oracle needs a linear-gaussian system");
  spec.validate();
  const std::size_t n = spec.state_size();
  const std::size_t length = obs.length();
  check(length >= 1, ErrorCode::kInvalidArgument, "no steps to smooth");
  check_observations(obs, n);
  const Matrix f = to_matrix(spec.transition);
  const Matrix q = to_matrix(spec.process_cov);

  OracleResult out;
  std::vector<Matrix> pred_covs;
  Vec m = to_vec(m0);
  Matrix p = to_matrix(p0);
  check(m.size() == static_cast<Eigen::Index>(n) && p.rows() == m.size() && p.cols() == m.size(),
        ErrorCode::kShapeMismatch, "initial moments do not match state size {}", n);
  for (std::size_t i = 0; i < length; ++i) {
    if (i > 0) {
      m = f * m;
      p = symmetrize(f * p * f.transpose() + q);
    }
    pred_covs.push_back(p);
    const Matrix h = to_matrix(obs.operators[i]);
    if (h.rows() > 0) {
      const Matrix s = symmetrize(h * p * h.transpose() + to_matrix(obs.noise_cov[i]));
      Eigen::LDLT<Matrix> ldlt(s);
      const double scale = std::max(1.0, s.cwiseAbs().maxCoeff());
      check(ldlt.info() == Eigen::Success && ldlt.vectorD().minCoeff() > 1e-13 * scale, ErrorCode::kNumerical,
            "singular innovation covariance at step {}", i);
      const Matrix gain = ldlt.solve(h * p).transpose();
      m = m + gain * (to_vec(obs.values[i]) - h * m);
      // Joseph form keeps the covariance PSD when observations are noiseless.
      const Matrix ikh = Matrix::Identity(p.rows(), p.cols()) - gain * h;
      p = symmetrize(ikh * p * ikh.transpose() + gain * to_matrix(obs.noise_cov[i]) * gain.transpose());
    }
    out.filter_means.push_back(from_vec(m));
    out.filter_covs.push_back(from_matrix(p));
  }

  out.means = out.filter_means;
  out.covs = out.filter_covs;
  Vec ms = m;
  Matrix ps = p;
  for (std::size_t i = length - 1; i-- > 0;) {
    const Matrix pf = to_matrix(out.filter_covs[i]);
    const Vec mf = to_vec(out.filter_means[i]);
    const Matrix& pp = pred_covs[i + 1];
    // G = Pf Fᵀ Pp⁺, via a rank-revealing solve so singular Pp is tolerated.
    const Matrix g = pp.completeOrthogonalDecomposition().solve(f * pf).transpose();
    ms = mf + g * (ms - f * mf);
    ps = symmetrize(pf + g * (ps - pp) * g.transpose());
    out.means[i] = from_vec(ms);
    out.covs[i] = from_matrix(ps);
  }
  return out;
}

OracleResult kalman_smoother(const systems::SystemSpec& spec, const LinearObservations& obs) {
  const std::size_t n = spec.state_size();
  return kalman_smoother(spec, obs, Tensor({n}), systems::stationary_covariance(spec));
}

JointGaussian joint_prior(const systems::SystemSpec& spec, std::size_t length, const Tensor& m0, const Tensor& p0) {
  check(spec.kind == systems::SystemKind::kLinearGaussian, ErrorCode::kInvalidArgument,
        "joint prior needs a linear-gaussian system");
  const auto n = static_cast<Eigen::Index>(spec.state_size());
  const auto len = static_cast<Eigen::Index>(length);
  const Matrix f = to_matrix(spec.transition);
  const Matrix q = to_matrix(spec.process_cov);
  std::vector<Vec> means{to_vec(m0)};
  std::vector<Matrix> marg{to_matrix(p0)};
  for (Eigen::Index i = 1; i < len; ++i) {
    means.push_back(f * means.back());
    marg.push_back(f * marg.back() * f.transpose() + q);
  }
  Matrix cov = Matrix::Zero(n * len, n * len);
  Vec mean(n * len);
  for (Eigen::Index i = 0; i < len; ++i) {
    mean.segment(i * n, n) = means[i];
    // Cov(x_j, x_i) = F^{j-i} P_i for j >= i.
    Matrix block = marg[i];
    for (Eigen::Index j = i; j < len; ++j) {
      cov.block(j * n, i * n, n, n) = block;
      cov.block(i * n, j * n, n, n) = block.transpose();
      block = f * block;
    }
  }
  return {from_vec(mean), from_matrix(cov)};
}

JointGaussian joint_posterior(const JointGaussian& prior, const LinearObservations& obs) {
  const Eigen::Index total = static_cast<Eigen::Index>(prior.mean.size());
  const Eigen::Index len = static_cast<Eigen::Index>(obs.length());
  check(len >= 1 && total % len == 0, ErrorCode::kShapeMismatch, "prior of {} values for {} steps", total, len);
  const Eigen::Index n = total / len;
  check_observations(obs, static_cast<std::size_t>(n));
  Eigen::Index rows = 0;
  for (const Tensor& h : obs.operators) rows += static_cast<Eigen::Index>(h.dim(0));
  const Vec mu = to_vec(prior.mean);
  const Matrix sigma = to_matrix(prior.cov);
  if (rows == 0) return prior;
  Matrix h = Matrix::Zero(rows, total);
  Matrix r = Matrix::Zero(rows, rows);
  Vec y(rows);
  Eigen::Index at = 0;
  for (Eigen::Index i = 0; i < len; ++i) {
    const Matrix hi = to_matrix(obs.operators[static_cast<std::size_t>(i)]);
    const Eigen::Index m = hi.rows();
    if (m == 0) continue;
    h.block(at, i * n, m, n) = hi;
    r.block(at, at, m, m) = to_matrix(obs.noise_cov[static_cast<std::size_t>(i)]);
    y.segment(at, m) = to_vec(obs.values[static_cast<std::size_t>(i)]);
    at += m;
  }
  const Matrix s = symmetrize(h * sigma * h.transpose() + r);
  const Eigen::LDLT<Matrix> ldlt(s);
  check(ldlt.info() == Eigen::Success, ErrorCode::kNumerical, "singular joint innovation covariance");
  const Matrix gain = ldlt.solve(h * sigma).transpose();
  const Vec mean = mu + gain * (y - h * mu);
  const Matrix cov = symmetrize(sigma - gain * h * sigma);
  return {from_vec(mean), from_matrix(cov)};
}

}  // namespace appa::eval
