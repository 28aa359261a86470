// Copyright 2026 The Appa Toy Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "autoencoder/autoencoder.hpp"
#include "core/error.hpp"
#include "core/rng.hpp"
#include "observation/observation.hpp"

namespace appa::obs {
namespace {

std::size_t count(const Mask& m) { return static_cast<std::size_t>(std::count(m.begin(), m.end(), true)); }

TEST(Stations, FullFraction) {
  const Mask m = station_mask(5, 7, 1.0, 3);
  EXPECT_EQ(count(m), 35u);
}

TEST(Stations, ExactCountAndSeed) {
  const Mask a = station_mask(100, 100, 0.01, 9);
  EXPECT_EQ(count(a), 100u);
  EXPECT_EQ(a, station_mask(100, 100, 0.01, 9));
  EXPECT_NE(a, station_mask(100, 100, 0.01, 10));
  EXPECT_EQ(count(station_mask(32, 32, 0.01, 0)), 10u);
}

TEST(Stations, RejectsEmptyOrBadFraction) {
  EXPECT_THROW(station_mask(10, 10, 0.001, 0), Error);
  EXPECT_THROW(station_mask(10, 10, 0.0, 0), Error);
  EXPECT_THROW(station_mask(10, 10, 1.5, 0), Error);
}

TEST(Stations, RoughlyUniform) {
  // Each point is selected with probability fraction; check the mean over
  // seeds per quadrant.
  std::vector<double> quadrant(4, 0.0);
  for (std::uint64_t seed = 0; seed < 400; ++seed) {
    const Mask m = station_mask(8, 8, 0.25, seed);
    for (std::size_t p = 0; p < 64; ++p)
      if (m[p]) quadrant[(p / 8 >= 4) * 2 + (p % 8 >= 4)] += 1.0;
  }
  for (double q : quadrant) EXPECT_NEAR(q / 400.0, 4.0, 0.3);
}

TEST(Swath, FullWidth) { EXPECT_EQ(count(swath_mask(3, 6, 5, 6, 2)), 18u); }

TEST(Swath, PeriodicWrap) {
  const std::size_t width = 12, speed = 3;
  for (std::size_t t = 0; t < 10; ++t)
    EXPECT_EQ(swath_mask(4, width, t, 2, speed), swath_mask(4, width, t + width / speed, 2, speed));
}

TEST(Swath, PeriodCoversEveryColumnOnce) {
  const std::size_t width = 12, band = 3;
  std::vector<int> hits(width, 0);
  for (std::size_t t = 0; t < width / band; ++t) {
    const Mask m = swath_mask(2, width, t, band, band);
    for (std::size_t x = 0; x < width; ++x) hits[x] += m[x];
    EXPECT_EQ(count(m), 2 * band);
  }
  for (int h : hits) EXPECT_EQ(h, 1);
}

TEST(Swath, RejectsWideBand) {
  EXPECT_THROW(swath_mask(2, 8, 0, 9, 1), Error);
  EXPECT_THROW(swath_mask(2, 8, 0, 0, 1), Error);
}

TEST(Indices, AllChannelsOfMaskedPoints) {
  Mask m(6, false);
  m[1] = m[4] = true;
  EXPECT_EQ(mask_indices(m, {2, 3, 2}), (std::vector<std::size_t>{2, 3, 8, 9}));
}

TEST(Observe, NoiselessFullIsIdentity) {
  ObservationConfig cfg;
  cfg.kind = ObservationKind::kFull;
  cfg.noise_std = 0.0;
  auto rng = make_rng(1);
  const Tensor x = randn({3, 2, 4, 2}, rng);
  const ObservationSet set = observe(x, layout(cfg, {2, 4, 2}, 3), 5);
  ASSERT_EQ(set.total(), x.size());
  std::size_t at = 0;
  for (const auto& s : set.steps)
    for (double v : s.values) EXPECT_EQ(v, x[at++]);
}

void check_noise(double std, ObservationKind kind) {
  ObservationConfig cfg;
  cfg.kind = kind;
  cfg.noise_std = std;
  cfg.fraction = 0.5;
  cfg.band = 100;
  cfg.speed = 7;
  const Tensor x({10, 100, 200, 1}, 0.25);
  const ObservationSet set = observe(x, layout(cfg, {100, 200, 1}, 10), 2);
  ASSERT_GE(set.total(), 100000u);
  double sq = 0.0;
  for (const auto& s : set.steps)
    for (double v : s.values) sq += (v - 0.25) * (v - 0.25);
  EXPECT_NEAR(std::sqrt(sq / static_cast<double>(set.total())), std, std * 0.01);
}

TEST(Observe, StationNoiseLevel) { check_noise(0.01, ObservationKind::kStations); }
TEST(Observe, SwathNoiseLevel) { check_noise(0.10, ObservationKind::kSwath); }

TEST(Observe, ReproducibleAndConvergent) {
  ObservationConfig cfg;
  auto rng = make_rng(3);
  const Tensor x = randn({4, 10, 10, 1}, rng);
  const ObservationSet base = layout(cfg, {10, 10, 1}, 4);
  EXPECT_EQ(observe(x, base, 1).steps[2].values, observe(x, base, 1).steps[2].values);
  cfg.noise_std = 1e-12;
  const ObservationSet tiny = observe(x, layout(cfg, {10, 10, 1}, 4), 1);
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t i = 0; i < tiny.steps[t].indices.size(); ++i)
      EXPECT_NEAR(tiny.steps[t].values[i], x[t * 100 + tiny.steps[t].indices[i]], 1e-10);
  EXPECT_THROW(observe(randn({5, 10, 10, 1}, rng), base, 1), Error);
}

TEST(Observe, ContainerRoundTrip) {
  ObservationConfig cfg;
  cfg.kind = ObservationKind::kSwath;
  cfg.band = 2;
  cfg.speed = 1;
  auto rng = make_rng(4);
  const ObservationSet set = observe(randn({3, 4, 6, 2}, rng), layout(cfg, {4, 6, 2}, 3), 8);
  Container c;
  c.kind = "observations";
  set.store(c, "");
  const ObservationSet back = ObservationSet::load(decode_container(encode_container(c)), "");
  ASSERT_EQ(back.length(), 3u);
  EXPECT_EQ(back.kind, ObservationKind::kSwath);
  for (std::size_t t = 0; t < 3; ++t) {
    EXPECT_EQ(back.steps[t].indices, set.steps[t].indices);
    EXPECT_EQ(back.steps[t].values, set.steps[t].values);
    EXPECT_EQ(back.steps[t].noise_std, set.steps[t].noise_std);
  }
}

TEST(Operator, IdentityFullFlattens) {
  ObservationConfig cfg;
  cfg.kind = ObservationKind::kFull;
  auto rng = make_rng(5);
  const Tensor x = randn({3, 1, 5, 1}, rng);
  const LatentObservationOperator op({}, 5, observe(x, layout(cfg, {1, 5, 1}, 3), 0));
  const Tensor z = randn({3, 5}, rng);
  EXPECT_EQ(op.apply(z).values(), z.values());
}

TEST(Operator, IdentityStationsGather) {
  ObservationConfig cfg;
  cfg.fraction = 0.3;
  auto rng = make_rng(6);
  const ObservationSet set = observe(randn({4, 1, 10, 2}, rng), layout(cfg, {1, 10, 2}, 4), 0);
  const LatentObservationOperator op({}, 20, set);
  const Tensor z = randn({4, 20}, rng);
  const Tensor y = op.apply(z);
  ASSERT_EQ(y.size(), set.total());
  std::size_t at = 0;
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t i : set.steps[t].indices) EXPECT_EQ(y[at++], z[t * 20 + i]);
  EXPECT_THROW(op.apply(randn({3, 20}, rng)), Error);
}

TEST(Operator, LinearDecoderMatchesDenseProduct) {
  // D(z) = z M with M [3, 4]; observe two of four state entries per step.
  auto rng = make_rng(7);
  const Tensor m = randn({3, 4}, rng);
  const Decoder dec = [&](ad::Var z) { return ad::matmul(z, z.graph().constant(m)); };
  ObservationSet set;
  set.state_shape = {1, 4, 1};
  set.steps = {{{0, 3}, {0.0, 0.0}, {0.1, 0.1}}, {{1, 2}, {0.0, 0.0}, {0.1, 0.1}}};
  const LatentObservationOperator op(dec, 3, set);
  const Tensor z = randn({2, 3}, rng);
  // Dense A over the flattened [2, 3] latent.
  const std::size_t rows[4][2] = {{0, 0}, {0, 3}, {1, 1}, {1, 2}};
  Tensor a({4, 6});
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t k = 0; k < 3; ++k) a[r * 6 + rows[r][0] * 3 + k] = m[k * 4 + rows[r][1]];
  const Tensor y = op.apply(z);
  for (std::size_t r = 0; r < 4; ++r) {
    double expect = 0.0;
    for (std::size_t j = 0; j < 6; ++j) expect += a[r * 6 + j] * z[j];
    EXPECT_NEAR(y[r], expect, 1e-14);
  }
  // Transpose products through the tape.
  const Tensor u = randn({4}, rng);
  const Tensor atu = ad::vjp([&](ad::Graph& g, ad::Var v) { return op.apply(g, v); }, z, u);
  for (std::size_t j = 0; j < 6; ++j) {
    double expect = 0.0;
    for (std::size_t r = 0; r < 4; ++r) expect += a[r * 6 + j] * u[r];
    EXPECT_NEAR(atu[j], expect, 1e-12);
  }
}

TEST(Operator, ConvDecoderVjpMatchesDenseJacobian) {
  ae::AutoencoderConfig cfg;
  cfg.mode = ae::Mode::kConv;
  cfg.factor = 2;
  cfg.latent_channels = 2;
  cfg.hidden = 4;
  const ae::Autoencoder model(cfg, {4, 4, 1}, 3);
  ObservationConfig ocfg;
  ocfg.fraction = 0.5;
  auto rng = make_rng(8);
  const ObservationSet set = observe(randn({2, 4, 4, 1}, rng), layout(ocfg, {4, 4, 1}, 2), 0);
  const LatentObservationOperator op(decoder_of(model), model.latent_dim(), set);
  const Tensor z = randn({2, model.latent_dim()}, rng);
  // Dense Jacobian column by column with forward tangents.
  const ad::Function f = [&](ad::Graph& g, ad::Var v) { return op.apply(g, v); };
  const std::size_t n = z.size(), m = op.count();
  std::vector<double> jac(m * n);
  for (std::size_t j = 0; j < n; ++j) {
    Tensor e(z.shape());
    e[j] = 1.0;
    const Tensor col = ad::jvp(f, z, e);
    for (std::size_t r = 0; r < m; ++r) jac[r * n + j] = col[r];
  }
  const Tensor u = randn({m}, rng);
  const Tensor atu = ad::vjp(f, z, u);
  for (std::size_t j = 0; j < n; ++j) {
    double expect = 0.0;
    for (std::size_t r = 0; r < m; ++r) expect += jac[r * n + j] * u[r];
    EXPECT_NEAR(atu[j], expect, 1e-8);
  }
  // And it is the decoder followed by the mask.
  const Tensor decoded = model.decode(z);
  const Tensor y = op.apply(z);
  for (std::size_t r = 0; r < m; ++r) EXPECT_EQ(y[r], decoded[op.indices()[r]]);
}

TEST(Operator, PinsSelectRows) {
  auto rng = make_rng(9);
  const Tensor pinned = randn({2, 3}, rng);
  const LatentObservationOperator op = LatentObservationOperator::pins(5, 3, {0, 1}, pinned);
  EXPECT_EQ(op.count(), 6u);
  EXPECT_EQ(op.noise_var().values(), std::vector<double>(6, 0.0));
  const Tensor z = randn({5, 3}, rng);
  const Tensor y = op.apply(z);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(y[i], z[i]);
  EXPECT_THROW(LatentObservationOperator::pins(5, 3, {7}, randn({1, 3}, rng)), Error);
}

}  // namespace
}  // namespace appa::obs
