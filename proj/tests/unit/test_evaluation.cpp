// Copyright 2026 The Appa Toy Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "core/error.hpp"
#include "core/rng.hpp"
#include "evaluation/kalman.hpp"
#include "evaluation/metrics.hpp"
#include "evaluation/physics.hpp"
#include "evaluation/spectrum.hpp"

namespace appa::eval {
namespace {

Ensemble one_point(std::vector<double> members, double truth) {
  const std::size_t m = members.size();
  return {Tensor({1, m, 1}, std::move(members)), Tensor({1, 1}, {truth})};
}

Ensemble random_ensemble(std::size_t k, std::size_t m, std::size_t p, std::uint64_t seed) {
  auto rng = make_rng(seed);
  return {randn({k, m, p}, rng), randn({k, p}, rng)};
}

// Reference implementations written as literal loops over (k, point, member).
double naive_skill(const Ensemble& e) {
  const std::size_t K = e.members.dim(0), M = e.members.dim(1), P = e.members.dim(2);
  double s = 0;
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t p = 0; p < P; ++p) {
      double mean = 0;
      for (std::size_t m = 0; m < M; ++m) mean += e.members[(k * M + m) * P + p];
      mean /= M;
      s += (e.truth[k * P + p] - mean) * (e.truth[k * P + p] - mean);
    }
  return std::sqrt(s / (K * P));
}

double naive_spread(const Ensemble& e) {
  const std::size_t K = e.members.dim(0), M = e.members.dim(1), P = e.members.dim(2);
  double s = 0;
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t p = 0; p < P; ++p) {
      double mean = 0;
      for (std::size_t n = 0; n < M; ++n) mean += e.members[(k * M + n) * P + p];
      mean /= M;
      double v = 0;
      for (std::size_t m = 0; m < M; ++m) v += std::pow(e.members[(k * M + m) * P + p] - mean, 2);
      s += v / (M - 1);
    }
  return std::sqrt(s / (K * P));
}

// Integral CRPS of the empirical CDF against a point truth, exact for step
// functions: sum of (F - H)^2 over the intervals between sorted breakpoints.
double integral_crps(std::vector<double> xs, double y) {
  const double m = static_cast<double>(xs.size());
  std::vector<double> pts = xs;
  pts.push_back(y);
  std::sort(pts.begin(), pts.end());
  double total = 0;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const double mid = 0.5 * (pts[i] + pts[i + 1]);
    const double f = static_cast<double>(std::count_if(xs.begin(), xs.end(), [&](double x) { return x <= mid; })) / m;
    const double h = mid >= y ? 1.0 : 0.0;
    total += (f - h) * (f - h) * (pts[i + 1] - pts[i]);
  }
  return total;
}

TEST(Metrics, HandCases) {
  EXPECT_EQ(skill(one_point({0.0, 2.0}, 1.0)), 0.0);
  EXPECT_DOUBLE_EQ(spread(one_point({0.0, 2.0}, 1.0)), std::sqrt(2.0));
  EXPECT_EQ(crps(one_point({0.0, 2.0}, 1.0)), 0.0);
  EXPECT_EQ(spread(one_point({3.0, 3.0, 3.0}, 1.0)), 0.0);
  EXPECT_EQ(spread_skill_ratio(one_point({3.0, 3.0, 3.0}, 1.0)), 0.0);
}

TEST(Metrics, PerfectEnsembleScoresZero) {
  Ensemble e = random_ensemble(3, 1, 20, 1);
  for (std::size_t i = 0; i < e.truth.size(); ++i) e.members[i] = e.truth[i];
  EXPECT_EQ(skill(e), 0.0);
  EXPECT_EQ(crps(e), 0.0);
  Ensemble many{Tensor({3, 4, 20}), e.truth};
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t m = 0; m < 4; ++m)
      for (std::size_t p = 0; p < 20; ++p) many.members[(k * 4 + m) * 20 + p] = e.truth[k * 20 + p];
  EXPECT_EQ(crps(many), 0.0);
  EXPECT_EQ(skill(many), 0.0);
}

TEST(Metrics, SingleMemberCrpsIsMaeAndSkillIsRmse) {
  const Ensemble e = random_ensemble(4, 1, 37, 2);
  EXPECT_EQ(crps(e), mae(e));
  double sq = 0;
  for (std::size_t i = 0; i < e.truth.size(); ++i) sq += std::pow(e.members[i] - e.truth[i], 2);
  EXPECT_NEAR(skill(e), std::sqrt(sq / e.truth.size()), 1e-15);
  EXPECT_THROW(spread(e), Error);
}

TEST(Metrics, MatchNaiveReference) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Ensemble e = random_ensemble(1 + seed % 3, 2 + seed % 5, 3 + seed, seed);
    EXPECT_NEAR(skill(e), naive_skill(e), 1e-12);
    EXPECT_NEAR(spread(e), naive_spread(e), 1e-12);
    const double m = static_cast<double>(e.size());
    EXPECT_NEAR(spread_skill_ratio(e), std::sqrt((m + 1) / m) * naive_spread(e) / naive_skill(e), 1e-12);
  }
}

TEST(Metrics, CrpsAgainstIntegralOracle) {
  // The integral form is the plain empirical CRPS; the fair estimator drops
  // sum|x_m - x_n| / (2 M^2 (M - 1)) from it.
  auto check_case = [](const std::vector<double>& xs, double y) {
    const double m = static_cast<double>(xs.size());
    double pair = 0;
    for (double a : xs)
      for (double b : xs) pair += std::abs(a - b);
    const double expected = integral_crps(xs, y) - pair / (2 * m * m * (m - 1));
    EXPECT_NEAR(crps(one_point(xs, y)), expected, 1e-10);
  };
  EXPECT_NEAR(integral_crps({0.0, 2.0}, 1.0), 0.5, 1e-15);
  check_case({0.0, 2.0}, 1.0);
  auto rng = make_rng(3);
  std::normal_distribution<double> normal;
  for (int i = 0; i < 20; ++i) {
    std::vector<double> xs(2 + i % 7);
    for (double& x : xs) x = normal(rng);
    check_case(xs, normal(rng));
  }
}

TEST(Metrics, CrpsIsNonNegative) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) EXPECT_GE(crps(random_ensemble(2, 1 + seed % 6, 5, seed)), 0.0);
}

TEST(Metrics, CalibratedEnsembleRatioNearOne) {
  const Ensemble e = random_ensemble(8, 16, 12500, 9);
  const double r = spread_skill_ratio(e);
  EXPECT_GE(r, 0.95);
  EXPECT_LE(r, 1.05);
  EXPECT_NEAR(spread(random_ensemble(40, 64, 500, 10)), 1.0, 0.05);
}

TEST(Metrics, Errors) {
  EXPECT_THROW(skill({Tensor({0, 2, 3}), Tensor({0, 3})}), Error);
  EXPECT_THROW(skill({Tensor({1, 2, 3}), Tensor({1, 4})}), Error);
  EXPECT_THROW(spread_skill_ratio(one_point({1.0, 1.0}, 1.0)), Error);
}

TEST(Metrics, TableSelectsLeadAndChannel) {
  auto rng = make_rng(4);
  Ensemble e{randn({2, 3, 4, 5, 2}, rng), randn({2, 4, 5, 2}, rng)};
  const auto rows = metric_table(e);
  ASSERT_EQ(rows.size(), 8u);
  const Ensemble sub = select(e, 2, 1);
  EXPECT_EQ(sub.members[0], e.members[2 * 10 + 1]);
  EXPECT_EQ(rows[5].lead, 2u);
  EXPECT_EQ(rows[5].channel, 1u);
  EXPECT_EQ(rows[5].skill, skill(sub));
}

TEST(Spectrum, SinePeaksAtItsWavenumber) {
  const std::size_t n = 32;
  std::vector<double> f(n * n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) f[r * n + c] = std::sin(2 * std::numbers::pi * 5 * c / n);
  const auto s = isotropic_spectrum(f.data(), n, n);
  const auto peak = std::max_element(s.begin(), s.end()) - s.begin();
  EXPECT_EQ(peak + 1, 5);
  for (std::size_t k = 0; k < s.size(); ++k)
    if (k != 4) EXPECT_LT(s[k], 1e-20);
}

TEST(Spectrum, WhiteNoiseIsFlat) {
  auto rng = make_rng(5);
  const Tensor noise = randn({200, 32, 32, 1}, rng);
  const SpectrumBands b = psd(noise);
  for (std::size_t k = 1; k < b.median.size(); ++k) EXPECT_NEAR(b.median[k], 1.0, 0.15) << "bin " << k + 1;
}

TEST(Spectrum, InvariantUnderCyclicShift) {
  auto rng = make_rng(6);
  const Tensor f = randn({16, 24}, rng);
  Tensor shifted({16, 24});
  for (std::size_t r = 0; r < 16; ++r)
    for (std::size_t c = 0; c < 24; ++c) shifted[((r + 3) % 16) * 24 + (c + 7) % 24] = f[r * 24 + c];
  const auto a = isotropic_spectrum(f.data().data(), 16, 24);
  const auto b = isotropic_spectrum(shifted.data().data(), 16, 24);
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(a[k], b[k], 1e-12 * (1 + a[k]));
}

TEST(Spectrum, RejectsNonPeriodicGrid) {
  EXPECT_THROW(psd(Tensor({1, 8, 8, 1}), false), Error);
}

TEST(Altitude, GeopotentialEstimator) {
  EXPECT_EQ(altitude_from_geopotential(0.0), 0.0);
  const double phi = 5000.0;
  const double h = altitude_from_geopotential(phi);
  EXPECT_LT(std::abs(h - phi / kGravity) / h, phi / (kGravity * kEarthRadius));
  EXPECT_THROW(altitude_from_geopotential(kGravity * kEarthRadius), Error);
  EXPECT_NEAR(altitude_from_geopotential(geopotential_from_altitude(5500.0)), 5500.0, 1e-8);
}

TEST(Altitude, EstimatorsAgreeOnIsothermalColumn) {
  const double t = 250.0;
  for (double p : {85000.0, 50000.0, 25000.0}) {
    // Column built from the hydrostatic isothermal law, geopotential from it.
    const double h = kGasConstant * t / (kMolarMass * kGravity) * std::log(kSeaLevelPressure / p);
    const Tensor phi({1}, {geopotential_from_altitude(h)});
    const Tensor dh = altitude_difference(phi, Tensor({1}, {p}), Tensor({1}, {t}));
    EXPECT_LT(std::abs(dh[0]), 1.0);
  }
}

TEST(Altitude, LapseRateBreaksIsothermalAssumptionPredictably) {
  // Linear profile T = T0 - G h has ln(p0/p) = (M g0 / (R G)) ln(T0 / (T0 - G H)).
  const double t0 = 288.15, lapse = 0.0065, h = 5500.0;
  const double th = t0 - lapse * h;
  const double p = kSeaLevelPressure * std::pow(th / t0, kMolarMass * kGravity / (kGasConstant * lapse));
  const double iso = altitude_from_pressure_temperature(p, th);
  const double expected = h * th * std::log(t0 / th) / (t0 - th);
  EXPECT_LT(iso, h);
  EXPECT_NEAR(iso, expected, 1e-6);
}

LatLonGrid test_grid(std::size_t rows, std::size_t cols) {
  LatLonGrid g;
  g.columns = cols;
  for (std::size_t r = 0; r < rows; ++r) g.latitudes.push_back(-90.0 + 180.0 * (r + 0.5) / rows);
  return g;
}

Tensor smooth_geopotential(const LatLonGrid& g) {
  Tensor phi({g.latitudes.size(), g.columns});
  for (std::size_t r = 0; r < g.latitudes.size(); ++r)
    for (std::size_t c = 0; c < g.columns; ++c) {
      const double lat = g.latitudes[r] * std::numbers::pi / 180, lon = 2 * std::numbers::pi * c / g.columns;
      phi[r * g.columns + c] = 5.5e4 + 800 * std::sin(2 * lat) * std::cos(3 * lon) + 300 * std::cos(lat) * std::sin(lon);
    }
  return phi;
}

TEST(Geostrophic, BalancedFieldIsPerpendicularAndCorrelated) {
  const LatLonGrid g = test_grid(45, 90);
  const Tensor phi = smooth_geopotential(g);
  const GeostrophicWind w = geostrophic_wind(phi, g);
  const GeostrophicDiagnostics d = geostrophic_diagnostics(phi, w.u, w.v, g);
  ASSERT_GT(d.cos_theta.size(), 1000u);
  for (std::size_t i = 0; i < d.cos_theta.size(); ++i) {
    ASSERT_LT(std::abs(d.cos_theta[i]), 1e-6);
    ASSERT_NEAR(std::abs(d.sin_theta[i]), 1.0, 1e-6);
  }
  ASSERT_TRUE(d.correlation.has_value());
  EXPECT_NEAR(*d.correlation, 1.0, 1e-6);
}

TEST(Geostrophic, WindAlongGradientHasZeroAngle) {
  const LatLonGrid g = test_grid(30, 60);
  const Tensor phi = smooth_geopotential(g);
  const GeostrophicWind w = geostrophic_wind(phi, g);
  // The balanced wind rotated by 90 degrees is parallel to the gradient.
  Tensor u(phi.shape()), v(phi.shape());
  for (std::size_t i = 0; i < phi.size(); ++i) {
    u[i] = w.v[i];
    v[i] = -w.u[i];
  }
  const GeostrophicDiagnostics d = geostrophic_diagnostics(phi, u, v, g);
  std::size_t aligned = 0;
  for (double cs : d.cos_theta) aligned += std::abs(std::abs(cs) - 1.0) < 1e-9;
  ASSERT_FALSE(d.cos_theta.empty());
  EXPECT_EQ(aligned, d.cos_theta.size());
}

TEST(Geostrophic, ZeroWindIsDegenerateNotNaN) {
  const LatLonGrid g = test_grid(20, 40);
  const Tensor phi = smooth_geopotential(g);
  const GeostrophicDiagnostics d = geostrophic_diagnostics(phi, Tensor(phi.shape()), Tensor(phi.shape()), g);
  EXPECT_TRUE(d.degenerate);
  EXPECT_FALSE(d.correlation.has_value());
  EXPECT_TRUE(d.cos_theta.empty());
}

TEST(Geostrophic, AllMaskedGridRejected) {
  LatLonGrid g = test_grid(4, 8);
  g.equator_exclusion = 89.0;
  const Tensor phi = smooth_geopotential(g);
  EXPECT_THROW(geostrophic_diagnostics(phi, phi, phi, g), Error);
}

systems::SystemSpec random_walk(double q) {
  systems::SystemSpec s = systems::linear_gaussian(1);
  s.transition = Tensor({1, 1}, {1.0});
  s.process_cov = Tensor({1, 1}, {q});
  return s;
}

TEST(Kalman, NoObservationsGivesPriorMeans) {
  const systems::SystemSpec spec = systems::linear_gaussian(3, 0.8);
  const Tensor m0({3}, {1.0, -2.0, 0.5});
  const OracleResult r = kalman_smoother(spec, LinearObservations::none(6, 3), m0, Tensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
  Tensor m = m0;
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_LE(max_abs_diff(r.means[i], m), 1e-14);
    Tensor next({3});
    for (std::size_t a = 0; a < 3; ++a)
      for (std::size_t b = 0; b < 3; ++b) next[a] += spec.transition[a * 3 + b] * m[b];
    m = next;
  }
}

TEST(Kalman, NoiselessFullObservationsPinTheMeans) {
  const systems::SystemSpec spec = systems::linear_gaussian(2, 0.9);
  LinearObservations obs;
  auto rng = make_rng(1);
  for (std::size_t i = 0; i < 5; ++i) {
    obs.operators.push_back(Tensor({2, 2}, {1, 0, 0, 1}));
    obs.values.push_back(randn({2}, rng));
    obs.noise_cov.push_back(Tensor({2, 2}));
  }
  const OracleResult r = kalman_smoother(spec, obs);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_LE(max_abs_diff(r.means[i], obs.values[i]), 1e-10);
    EXPECT_LE(max_abs_diff(r.filter_means[i], obs.values[i]), 1e-10);
  }
}

TEST(Kalman, RandomWalkPrecisionWeightedAverage) {
  const double q = 0.5, p0 = 2.0, r = 0.3, y = 1.7, m0 = -0.4;
  LinearObservations obs = LinearObservations::none(4, 1);
  obs.operators[3] = Tensor({1, 1}, {1.0});
  obs.values[3] = Tensor({1}, {y});
  obs.noise_cov[3] = Tensor({1, 1}, {r});
  const OracleResult res = kalman_smoother(random_walk(q), obs, Tensor({1}, {m0}), Tensor({1, 1}, {p0}));
  const double prior_var = p0 + 3 * q;
  const double post = (m0 / prior_var + y / r) / (1 / prior_var + 1 / r);
  EXPECT_NEAR(res.filter_means[3][0], post, 1e-14);
  EXPECT_NEAR(res.means[3][0], post, 1e-14);
  EXPECT_NEAR(res.covs[3][0], 1 / (1 / prior_var + 1 / r), 1e-14);
  // Step 1 correlates with step 4 through Cov = p0 + q.
  const double gain = (p0 + q) / (prior_var + r);
  EXPECT_NEAR(res.means[1][0], m0 + gain * (y - m0), 1e-13);
}

TEST(Kalman, SmootherMatchesDenseJointPosterior) {
  auto rng = make_rng(12);
  systems::SystemSpec spec = systems::linear_gaussian(3, 0.85, 0.7);
  spec.process_cov = Tensor({3, 3}, {0.4, 0.1, 0.0, 0.1, 0.3, 0.05, 0.0, 0.05, 0.2});
  const std::size_t len = 7;
  LinearObservations obs;
  for (std::size_t i = 0; i < len; ++i) {
    const std::size_t m = i % 3;
    obs.operators.push_back(randn({m, 3}, rng));
    obs.values.push_back(randn({m}, rng));
    Tensor r({m, m});
    for (std::size_t a = 0; a < m; ++a) r[a * m + a] = 0.1 + 0.05 * a;
    obs.noise_cov.push_back(r);
  }
  const Tensor m0({3}, {0.3, 0.0, -0.2});
  const Tensor p0 = systems::stationary_covariance(spec);
  const OracleResult rts = kalman_smoother(spec, obs, m0, p0);
  const JointGaussian post = joint_posterior(joint_prior(spec, len, m0, p0), obs);
  for (std::size_t i = 0; i < len; ++i)
    for (std::size_t a = 0; a < 3; ++a) {
      EXPECT_NEAR(rts.means[i][a], post.mean[i * 3 + a], 1e-10);
      for (std::size_t b = 0; b < 3; ++b)
        EXPECT_NEAR(rts.covs[i][a * 3 + b], post.cov[(i * 3 + a) * len * 3 + i * 3 + b], 1e-10);
    }
  // Filter at the last step equals the smoother there.
  EXPECT_LE(max_abs_diff(rts.filter_means.back(), rts.means.back()), 0.0);
}

TEST(Kalman, SingularInnovationRejected) {
  LinearObservations obs = LinearObservations::none(2, 1);
  obs.operators[0] = Tensor({1, 1}, {1.0});
  obs.values[0] = Tensor({1}, {0.0});
  obs.noise_cov[0] = Tensor({1, 1}, {0.0});
  EXPECT_THROW(kalman_smoother(random_walk(0.1), obs, Tensor({1}), Tensor({1, 1}, {0.0})), Error);
}

}  // namespace
}  // namespace appa::eval
