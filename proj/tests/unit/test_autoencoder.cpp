// Copyright 2026 The Appa Toy Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <filesystem>
#include <numeric>

#include <gtest/gtest.h>

#include "autoencoder/autoencoder.hpp"
#include "core/error.hpp"
#include "core/rng.hpp"
#include "systems/systems.hpp"

namespace appa::ae {
namespace {

AutoencoderConfig conv_config(std::size_t factor = 4, std::size_t latent_channels = 4) {
  AutoencoderConfig c;
  c.mode = Mode::kConv;
  c.factor = factor;
  c.latent_channels = latent_channels;
  c.hidden = 8;
  return c;
}

TEST(Identity, EncodeIsIdentityWithoutNoise) {
  AutoencoderConfig cfg;
  cfg.sigma_z = 0.0;
  const Autoencoder m(cfg, {1, 6, 2}, 0);
  auto rng = make_rng(1);
  const Tensor x = randn({5, 1, 6, 2}, rng);
  EXPECT_EQ(m.encode(x, rng).values(), x.values());
  EXPECT_EQ(m.decode(m.encode_mean(x)), x);
  EXPECT_EQ(m.latent_dim(), 12u);
}

TEST(Identity, LatentNoiseHasStdSigmaZ) {
  AutoencoderConfig cfg;
  cfg.sigma_z = 0.01;
  const Autoencoder m(cfg, {1, 4, 1}, 0);
  auto rng = make_rng(2);
  const Tensor x = randn({10000, 1, 4, 1}, rng);
  const Tensor mean = m.encode_mean(x);
  const Tensor z = m.encode(x, rng);
  double sq = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) sq += std::pow(z[i] - mean[i], 2);
  EXPECT_NEAR(std::sqrt(sq / z.size()), 0.01, 0.0001);
  // Identity mode loss is the noise floor sigma_z^2.
  const double floor = weighted_mse(m.decode(z), x, m.weight_field());
  EXPECT_NEAR(floor, 1e-4, 5e-6);
}

TEST(Encode, SameSeedSameLatent) {
  const Autoencoder m(conv_config(), {8, 8, 1}, 3);
  auto data_rng = make_rng(4);
  const Tensor x = randn({2, 8, 8, 1}, data_rng);
  auto a = make_rng(9), b = make_rng(9);
  EXPECT_EQ(m.encode(x, a), m.encode(x, b));
}

TEST(Decode, ZeroLatentIsFinite) {
  for (Mode mode : {Mode::kMlp, Mode::kConv}) {
    AutoencoderConfig cfg = conv_config();
    cfg.mode = mode;
    const Autoencoder m(cfg, {8, 8, 2}, 1);
    const Tensor out = m.decode(Tensor({3, m.latent_dim()}));
    EXPECT_EQ(out.shape(), (Shape{3, 8, 8, 2}));
    EXPECT_TRUE(out.all_finite());
  }
}

TEST(Decode, RoundTripShapes) {
  for (std::size_t f : {1u, 2u, 4u})
    for (std::size_t h : {4u, 8u, 16u})
      for (std::size_t w : {4u, 12u}) {
        const Autoencoder m(conv_config(f, 3), {h, w, 2}, 5);
        auto rng = make_rng(f * 100 + h + w);
        const Tensor x = randn({2, 3, h, w, 2}, rng);
        const Tensor z = m.encode_mean(x);
        EXPECT_EQ(z.shape(), (Shape{2, 3, (h / f) * (w / f) * 3}));
        EXPECT_EQ(m.decode(z).shape(), x.shape());
      }
  EXPECT_THROW(Autoencoder(conv_config(4), {6, 8, 1}, 0), Error);
}

TEST(Encode, ShapeMismatchRejected) {
  const Autoencoder m(conv_config(), {8, 8, 1}, 0);
  EXPECT_THROW(m.encode_mean(Tensor({2, 8, 4, 1})), Error);
  EXPECT_THROW(m.decode(Tensor({2, 5})), Error);
}

Tensor roll(const Tensor& x, std::size_t dy, std::size_t dx) {
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  Tensor out(x.shape());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t q = 0; q < w; ++q)
        for (std::size_t k = 0; k < c; ++k)
          out[((b * h + (r + dy) % h) * w + (q + dx) % w) * c + k] = x[((b * h + r) * w + q) * c + k];
  return out;
}

TEST(Encode, ShiftEquivariantForStrideMultiples) {
  const Autoencoder m(conv_config(4, 2), {16, 16, 1}, 6);
  auto rng = make_rng(7);
  const Tensor x = randn({1, 16, 16, 1}, rng);
  const Tensor z = m.encode_mean(x).reshaped({1, 4, 4, 2});
  const Tensor zs = m.encode_mean(roll(x, 4, 8)).reshaped({1, 4, 4, 2});
  EXPECT_LE(max_abs_diff(zs, roll(z, 1, 2)), 1e-6);
  const Tensor back = m.decode(roll(z, 1, 2).reshaped({1, 32}));
  EXPECT_LE(max_abs_diff(back, roll(m.decode(z.reshaped({1, 32})), 4, 8)), 1e-6);
}

TEST(WeightedMse, UniformEqualsPlainMse) {
  auto rng = make_rng(8);
  const Tensor a = randn({3, 4, 5, 2}, rng), b = randn({3, 4, 5, 2}, rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  const Tensor w = weight_field({4, 5, 2}, {}, {});
  EXPECT_EQ(weighted_mse(a, b, w), acc / a.size());
  EXPECT_EQ(weighted_mse(a, a, w), 0.0);
}

TEST(WeightedMse, ChannelWeightIsLinear) {
  auto rng = make_rng(9);
  const Tensor a = randn({2, 3, 3, 2}, rng), b = randn({2, 3, 3, 2}, rng);
  auto numerator = [&](const Tensor& w) {
    double total = 0.0;
    for (double v : w.data()) total += v;
    return weighted_mse(a, b, w) * 2 * total;
  };
  double ch0 = 0.0;
  for (std::size_t i = 0; i < a.size(); i += 2) ch0 += (a[i] - b[i]) * (a[i] - b[i]);
  const double base = numerator(weight_field({3, 3, 2}, {1.0, 1.0}, {}));
  const double doubled = numerator(weight_field({3, 3, 2}, {2.0, 1.0}, {}));
  EXPECT_NEAR(doubled - base, ch0, 1e-12);
}

TEST(WeightedMse, RowWeightsAndErrors) {
  const Tensor w = weight_field({2, 1, 2}, {1.0, 3.0}, {0.5, 2.0});
  EXPECT_EQ(w.values(), (std::vector<double>{0.5, 1.5, 2.0, 6.0}));
  EXPECT_THROW(weight_field({2, 1, 2}, {1.0, 0.0}, {}), Error);
  EXPECT_THROW(weight_field({2, 1, 2}, {}, {1.0, -1.0}), Error);
  EXPECT_THROW(weighted_mse(Tensor({1, 2, 1, 2}), Tensor({1, 2, 1, 2}), Tensor({2, 1, 2}, -1.0)), Error);
}

TEST(Gradients, LossMatchesFiniteDifferences) {
  for (Mode mode : {Mode::kMlp, Mode::kConv}) {
    AutoencoderConfig cfg = conv_config(2, 2);
    cfg.mode = mode;
    cfg.hidden = 4;
    cfg.latent_dim = 3;
    Autoencoder m(cfg, {4, 4, 1}, 10);
    auto rng = make_rng(11);
    const Tensor x = randn({2, 4, 4, 1}, rng);
    auto loss = [&](const ParamSet& params) {
      ad::Graph g;
      const BoundParams p(g, params, true);
      ad::Var xv = g.constant(x);
      ad::Var l = weighted_mse(m.decode(m.encode(xv, p), p), xv, m.weight_field());
      g.backward(l);
      std::vector<Tensor> grads;
      for (ad::Var v : p.vars()) grads.push_back(g.grad(v));
      return std::make_pair(l.value().item(), grads);
    };
    const auto [l0, grads] = loss(m.params());
    for (std::size_t k = 0; k < m.params().size(); ++k) {
      for (std::size_t i = 0; i < std::min<std::size_t>(4, m.params().values()[k].size()); ++i) {
        ParamSet plus = m.params(), minus = m.params();
        plus.values()[k][i] += 1e-5;
        minus.values()[k][i] -= 1e-5;
        const double fd = (loss(plus).first - loss(minus).first) / 2e-5;
        EXPECT_NEAR(grads[k][i], fd, 1e-4 * std::max(1.0, std::abs(fd))) << m.params().names()[k];
      }
    }
  }
}

TEST(Checkpoint, SaveLoadRoundTrip) {
  const Autoencoder m(conv_config(2, 3), {8, 8, 2}, 12);
  const auto path = std::filesystem::temp_directory_path() / "appa_ae_roundtrip.bin";
  save_autoencoder(m, path);
  const Autoencoder back = load_autoencoder(path);
  EXPECT_EQ(back.params().values(), m.params().values());
  EXPECT_EQ(back.config().to_json(), m.config().to_json());
  auto rng = make_rng(1);
  const Tensor x = randn({2, 8, 8, 2}, rng);
  EXPECT_EQ(back.encode_mean(x), m.encode_mean(x));
}

TEST(Training, ResumeMatchesUninterruptedRun) {
  AutoencoderConfig cfg;
  cfg.mode = Mode::kMlp;
  cfg.latent_dim = 4;
  cfg.hidden = 8;
  cfg.steps = 20;
  cfg.batch = 8;
  cfg.micro_batch = 4;
  const systems::SystemSpec spec = systems::lorenz96(8);
  const Tensor data = systems::standardize(systems::generate(spec, 4, 16, 50, 1), spec, "train").trajectories;

  Autoencoder full(cfg, spec.state_shape(), 1);
  const TrainReport a = train_autoencoder(full, data, Tensor(), 5, 1);

  AutoencoderConfig half_cfg = cfg;
  half_cfg.steps = 9;
  Autoencoder part(half_cfg, spec.state_shape(), 1);
  TrainState state;
  train_autoencoder(part, data, Tensor(), 5, 1, &state);
  Autoencoder resumed(cfg, spec.state_shape(), 1);
  const TrainReport b = train_autoencoder(resumed, data, Tensor(), 5, 3, &state);
  EXPECT_EQ(a.losses, b.losses);
  EXPECT_EQ(full.params().values(), resumed.params().values());
  EXPECT_LT(a.losses.back(), a.losses.front());
}

TEST(Training, AdvectionConvReachesTargetRmse) {
  const systems::SystemSpec spec = systems::advection2d(32, 32);
  const systems::TrajectoryDataset train =
      systems::standardize(systems::generate(spec, 16, 64, 200, 1), spec, "train");
  const systems::TrajectoryDataset val =
      systems::standardize(systems::generate(spec, 2, 64, 200, 2), spec, "val", train.stats);
  AutoencoderConfig cfg = conv_config(4, 4);
  cfg.hidden = 32;
  cfg.lr = 2e-3;
  cfg.steps = 600;
  cfg.batch = 16;
  cfg.micro_batch = 4;
  Autoencoder m(cfg, spec.state_shape(), 3);
  const TrainReport r = train_autoencoder(m, train.trajectories, val.trajectories, 5);
  EXPECT_LT(r.val_rmse, 0.15);

  // Smoothed loss decreases.
  auto window_mean = [&](std::size_t b) {
    return std::accumulate(r.losses.begin() + b, r.losses.begin() + b + 50, 0.0) / 50;
  };
  EXPECT_LT(window_mean(550), window_mean(250));
  EXPECT_LT(window_mean(250), window_mean(0));

  // The model learns spatial structure: scrambling pixels hurts.
  Tensor scrambled = val.trajectories;
  auto rng = make_rng(13);
  const std::size_t field = 32 * 32;
  for (std::size_t s = 0; s < scrambled.size() / field; ++s)
    std::shuffle(scrambled.data().begin() + s * field, scrambled.data().begin() + (s + 1) * field, rng);
  EXPECT_LT(r.val_rmse, reconstruction_rmse(m, scrambled));
  std::printf("advection conv AE: val RMSE %.4f after %zu steps\n", r.val_rmse, r.losses.size());
}

}  // namespace
}  // namespace appa::ae
