// Copyright 2026 The Appa Toy Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "core/adam.hpp"
#include "core/autodiff.hpp"
#include "core/container.hpp"
#include "core/error.hpp"
#include "core/params.hpp"
#include "core/rng.hpp"

using namespace appa;
using namespace appa::ad;

namespace {

// Central finite differences of a scalar function of several tensors.
std::vector<Tensor> finite_difference(const ScalarFunction& f, const std::vector<Tensor>& params, double h) {
  auto eval = [&](const std::vector<Tensor>& ps) {
    Graph g;
    std::vector<Var> vars;
    for (const Tensor& p : ps) vars.push_back(g.constant(p));
    return f(g, vars).value().item();
  };
  std::vector<Tensor> out;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor gk(params[k].shape());
    for (std::size_t i = 0; i < params[k].size(); ++i) {
      auto plus = params, minus = params;
      plus[k][i] += h;
      minus[k][i] -= h;
      gk[i] = (eval(plus) - eval(minus)) / (2.0 * h);
    }
    out.push_back(std::move(gk));
  }
  return out;
}

double relative_error(const Tensor& a, const Tensor& b) {
  return norm(a - b) / std::max(norm(b), 1e-12);
}

// Contract an arbitrary-shaped output with fixed random weights so every
// output entry contributes to the scalar.
Var contract(Var y, std::uint64_t seed) {
  auto rng = make_rng(seed, 99);
  return sum(mul_const(y, randn(y.shape(), rng)));
}

void expect_gradcheck(const ScalarFunction& f, const std::vector<Tensor>& params, const char* label) {
  const auto analytic = grad(f, params);
  const auto numeric = finite_difference(f, params, 1e-5);
  for (std::size_t k = 0; k < params.size(); ++k)
    EXPECT_LT(relative_error(analytic[k], numeric[k]), 1e-4) << label << " param " << k;
}

Tensor random_tensor(const Shape& shape, std::uint64_t stream) {
  auto rng = make_rng(7, stream);
  return randn(shape, rng);
}

}  // namespace

TEST(Grad, SquareAtThree) {
  auto g = grad([](Graph&, std::span<const Var> p) { return sum(mul(p[0], p[0])); }, {Tensor::scalar(3.0)});
  EXPECT_DOUBLE_EQ(g[0].item(), 6.0);
}

TEST(Grad, SumGivesOnes) {
  auto g = grad([](Graph&, std::span<const Var> p) { return sum(p[0]); }, {Tensor({2, 3, 4}, 0.5)});
  EXPECT_EQ(g[0].shape(), (Shape{2, 3, 4}));
  for (double v : g[0].data()) EXPECT_EQ(v, 1.0);
}

TEST(Grad, NonScalarOutputIsRejected) {
  EXPECT_THROW(grad([](Graph&, std::span<const Var> p) { return p[0]; }, {Tensor({3}, 1.0)}), Error);
}

TEST(Grad, NaNInForwardNamesTheOp) {
  Graph g;
  Var x = g.input(Tensor({2}, std::vector<double>{1.0, 0.0}));
  Var big = g.constant(Tensor({2}, std::vector<double>{INFINITY, 1.0}));
  try {
    (void)mul(x, big);
    FAIL() << "expected a numerical error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNumerical);
    EXPECT_NE(std::string(e.what()).find("mul"), std::string::npos);
  }
}

TEST(Grad, TwoLayerMlpMatchesFiniteDifferences) {
  auto f = [](Graph& g, std::span<const Var> p) {
    Var x = g.constant(random_tensor({5, 3}, 1));
    Var h = gelu(affine(x, p[0], p[1]));
    Var y = affine(h, p[2], p[3]);
    Var target = g.constant(random_tensor({5, 2}, 2));
    Var d = sub(y, target);
    return mean(mul(d, d));
  };
  expect_gradcheck(f, {random_tensor({3, 4}, 3), random_tensor({4}, 4), random_tensor({4, 2}, 5),
                       random_tensor({2}, 6)},
                   "mlp");
}

TEST(Grad, EveryPrimitiveMatchesFiniteDifferences) {
  const Tensor a = random_tensor({3, 4}, 10);
  const Tensor b = random_tensor({3, 4}, 11);
  expect_gradcheck([](Graph&, std::span<const Var> p) { return contract(add(p[0], p[1]), 1); }, {a, b}, "add");
  expect_gradcheck([](Graph&, std::span<const Var> p) { return contract(sub(p[0], p[1]), 2); }, {a, b}, "sub");
  expect_gradcheck([](Graph&, std::span<const Var> p) { return contract(mul(p[0], p[1]), 3); }, {a, b}, "mul");
  expect_gradcheck([](Graph&, std::span<const Var> p) { return contract(scale(p[0], -1.7), 4); }, {a}, "scale");
  expect_gradcheck([b](Graph&, std::span<const Var> p) { return contract(mul_const(p[0], b), 5); }, {a},
                   "mul_const");
  expect_gradcheck([b](Graph&, std::span<const Var> p) { return contract(add_const(p[0], b), 5); }, {a},
                   "add_const");
  expect_gradcheck([](Graph&, std::span<const Var> p) { return contract(tanh(p[0]), 6); }, {a}, "tanh");
  expect_gradcheck([](Graph&, std::span<const Var> p) { return contract(gelu(p[0]), 7); }, {a}, "gelu");
  expect_gradcheck([](Graph&, std::span<const Var> p) { return contract(matmul(p[0], p[1]), 8); },
                   {a, random_tensor({4, 2}, 12)}, "matmul");
  expect_gradcheck([](Graph&, std::span<const Var> p) { return contract(add_row(p[0], p[1]), 9); },
                   {a, random_tensor({4}, 13)}, "add_row");
  expect_gradcheck([](Graph&, std::span<const Var> p) { return contract(broadcast_rows(p[0], 3), 10); },
                   {random_tensor({4}, 14)}, "broadcast_rows");
  expect_gradcheck([](Graph&, std::span<const Var> p) { return mean(mul(p[0], p[0])); }, {a}, "mean");
  expect_gradcheck([](Graph&, std::span<const Var> p) { return contract(reshape(p[0], {2, 6}), 11); }, {a},
                   "reshape");
  expect_gradcheck([](Graph&, std::span<const Var> p) { return contract(slice_rows(p[0], 1, 3), 12); }, {a},
                   "slice_rows");
  expect_gradcheck(
      [](Graph&, std::span<const Var> p) {
        const Var parts[] = {p[0], p[1]};
        return contract(concat(parts, 1), 13);
      },
      {a, random_tensor({3, 2}, 15)}, "concat axis 1");
  expect_gradcheck(
      [](Graph&, std::span<const Var> p) {
        const Var parts[] = {p[0], p[1]};
        return contract(concat(parts, 0), 14);
      },
      {a, b}, "concat axis 0");
  auto idx = std::make_shared<const std::vector<std::size_t>>(std::vector<std::size_t>{0, 5, 5, 11, 3});
  expect_gradcheck([idx](Graph&, std::span<const Var> p) { return contract(gather(p[0], idx, {5}), 15); }, {a},
                   "gather");
}

TEST(Grad, ConvolutionsMatchFiniteDifferences) {
  const Tensor x = random_tensor({2, 4, 6, 3}, 20);
  const Tensor w = random_tensor({3, 3, 3, 2}, 21);
  const Tensor bias = random_tensor({2}, 22);
  for (auto pad : {Padding::kZero, Padding::kPeriodic}) {
    for (std::size_t stride : {1u, 2u}) {
      expect_gradcheck(
          [=](Graph&, std::span<const Var> p) { return contract(conv2d(p[0], p[1], p[2], stride, Padding::kZero, pad), 16); },
          {x, w, bias}, "conv2d");
    }
  }
  expect_gradcheck(
      [](Graph&, std::span<const Var> p) { return contract(conv1d(p[0], p[1], p[2], Padding::kPeriodic), 17); },
      {random_tensor({2, 7, 3}, 23), random_tensor({3, 3, 2}, 24), bias}, "conv1d");
}

TEST(Conv, PeriodicPaddingWrapsAround) {
  // A 1x3 averaging kernel on a single row must see the opposite edge.
  Graph g;
  Var x = g.constant(Tensor({1, 1, 4, 1}, std::vector<double>{1, 2, 3, 4}));
  Var w = g.constant(Tensor({1, 3, 1, 1}, std::vector<double>{1, 1, 1}));
  Var y = conv2d(x, w, std::nullopt, 1, Padding::kZero, Padding::kPeriodic);
  EXPECT_EQ(y.value().values(), (std::vector<double>{7, 6, 9, 8}));
  Var z = conv2d(x, w, std::nullopt, 1, Padding::kZero, Padding::kZero);
  EXPECT_EQ(z.value().values(), (std::vector<double>{3, 6, 9, 7}));
}

TEST(Conv, SpaceToDepthRoundTrip) {
  auto s2d = std::make_shared<const std::vector<std::size_t>>(space_to_depth_indices(2, 4, 8, 3, 2));
  auto d2s = std::make_shared<const std::vector<std::size_t>>(depth_to_space_indices(2, 4, 8, 3, 2));
  Graph g;
  const Tensor x = random_tensor({2, 4, 8, 3}, 30);
  Var packed = gather(g.constant(x), s2d, {2, 2, 4, 12});
  Var back = gather(packed, d2s, {2, 4, 8, 3});
  EXPECT_EQ(back.value(), x);
}

TEST(Jvp, LinearExamples) {
  auto twice = [](Graph&, Var x) { return scale(x, 2.0); };
  Tensor e1({3}, std::vector<double>{1, 0, 0});
  EXPECT_EQ(jvp(twice, random_tensor({3}, 40), e1).values(), (std::vector<double>{2, 0, 0}));

  const Tensor M({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  auto linear = [M](Graph& g, Var x) { return reshape(matmul(g.constant(M), reshape(x, {3, 1})), {2}); };
  const Tensor v({3}, std::vector<double>{0.5, -1, 2});
  EXPECT_EQ(jvp(linear, random_tensor({3}, 41), v).values(), (std::vector<double>{4.5, 9.0}));
}

TEST(Jvp, ShapeMismatchIsAnError) {
  auto f = [](Graph&, Var x) { return tanh(x); };
  EXPECT_THROW(jvp(f, Tensor({3}), Tensor({4})), Error);
  EXPECT_THROW(vjp(f, Tensor({3}), Tensor({2})), Error);
}

TEST(Jvp, AdjointIdentityOnRandomNetworks) {
  for (std::uint64_t trial = 0; trial < 10; ++trial) {
    const Tensor w1 = random_tensor({6, 8}, 100 + trial), w2 = random_tensor({8, 4}, 200 + trial);
    const Tensor cw = random_tensor({3, 3, 1, 2}, 300 + trial);
    auto f = [&](Graph& g, Var x) {
      Var h = gelu(matmul(reshape(x, {2, 6}), g.constant(w1)));
      Var y = tanh(matmul(h, g.constant(w2)));
      Var img = reshape(y, {1, 2, 4, 1});
      Var c = conv2d(img, g.constant(cw), std::nullopt, 1, Padding::kZero, Padding::kPeriodic);
      return reshape(c, {16});
    };
    const Tensor x = random_tensor({12}, 400 + trial);
    const Tensor v = random_tensor({12}, 500 + trial);
    const Tensor u = random_tensor({16}, 600 + trial);
    Linearization lin(f, x);
    const double lhs = dot(u, lin.jvp(v));
    const double rhs = dot(lin.vjp(u), v);
    EXPECT_NEAR(lhs, rhs, 1e-10 * std::max(1.0, std::abs(lhs)));
  }
}

TEST(Jvp, MatchesFiniteDifferenceDirectionalDerivative) {
  auto f = [](Graph&, Var x) { return gelu(mul(x, tanh(x))); };
  const Tensor x = random_tensor({5}, 50), v = random_tensor({5}, 51);
  const Tensor j = jvp(f, x, v);
  const double h = 1e-6;
  auto eval = [&](const Tensor& at) {
    Graph g;
    return f(g, g.constant(at)).value();
  };
  const Tensor fd = (eval(x + v * h) - eval(x - v * h)) * (0.5 / h);
  EXPECT_LT(relative_error(j, fd), 1e-6);
}

TEST(Adam, ZeroGradientsLeaveParamsAndDecayMoments) {
  std::vector<Tensor> params{Tensor({2}, std::vector<double>{1.0, -2.0})};
  AdamState state = AdamState::for_params(params, 0.1);
  state.m[0] = Tensor({2}, 0.5);
  state.v[0] = Tensor({2}, 0.25);
  adam_step(state, {Tensor({2})}, params);
  // m decays by beta1, v by beta2; the update itself is nonzero because
  // momentum is carried, so only check the moments and the step counter.
  EXPECT_DOUBLE_EQ(state.m[0][0], 0.45);
  EXPECT_DOUBLE_EQ(state.v[0][0], 0.25 * 0.999);
  EXPECT_EQ(state.step, 1u);

  std::vector<Tensor> fresh{Tensor({2}, std::vector<double>{1.0, -2.0})};
  AdamState clean = AdamState::for_params(fresh, 0.1);
  adam_step(clean, {Tensor({2})}, fresh);
  EXPECT_EQ(fresh[0].values(), (std::vector<double>{1.0, -2.0}));
}

TEST(Adam, FirstStepHasMagnitudeLr) {
  std::vector<Tensor> params{Tensor::scalar(5.0)};
  AdamState state = AdamState::for_params(params, 0.1);
  adam_step(state, {Tensor::scalar(1.0)}, params);
  EXPECT_NEAR(5.0 - params[0].item(), 0.1, 1e-6);
}

TEST(Adam, QuadraticBowlConverges) {
  std::vector<Tensor> params{Tensor({3}, 1.0)};
  AdamState state = AdamState::for_params(params, 0.05);
  for (int step = 0; step < 500; ++step) {
    auto g = grad([](Graph&, std::span<const Var> p) { return sum(mul(p[0], p[0])); }, params);
    adam_step(state, g, params);
  }
  EXPECT_LT(norm(params[0]), 1e-3);
}

TEST(Adam, ShapeMismatch) {
  std::vector<Tensor> params{Tensor({3})};
  AdamState state = AdamState::for_params(params, 0.1);
  EXPECT_THROW(adam_step(state, {Tensor({2})}, params), Error);
}

TEST(Determinism, SameSeedSameOutputs) {
  auto run = [] {
    auto rng = make_rng(1234, 5);
    const Tensor w = randn({4, 4}, rng), x = randn({3, 4}, rng);
    Graph g;
    Var y = gelu(matmul(g.input(x), g.constant(w)));
    g.backward(sum(y));
    return std::pair{y.value(), g.grad(Var(&g, 0))};
  };
  EXPECT_EQ(run(), run());
}

TEST(Container, RoundTripIsBitwise) {
  Container c;
  c.kind = "checkpoint";
  c.meta = {{"note", "x"}, {"value", 0.1 + 0.2}};
  c.add("a", random_tensor({2, 3}, 60));
  c.add("empty", Tensor({0, 4}));
  c.add("s", Tensor::scalar(-0.0));
  const std::string bytes = encode_container(c);
  Container back = decode_container(bytes, "checkpoint");
  EXPECT_EQ(back.kind, c.kind);
  EXPECT_EQ(back.meta, c.meta);
  ASSERT_EQ(back.tensors.size(), 3u);
  EXPECT_EQ(back.tensor("a"), c.tensor("a"));
  EXPECT_EQ(back.tensor("empty").shape(), (Shape{0, 4}));
  EXPECT_EQ(encode_container(back), bytes);
}

TEST(Container, DistinctErrors) {
  Container c;
  c.kind = "checkpoint";
  c.add("a", random_tensor({4}, 61));
  const std::string bytes = encode_container(c);
  auto code_of = [](const std::string& b) {
    try {
      decode_container(b);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::kInvalidArgument;
  };
  EXPECT_EQ(code_of(bytes.substr(0, bytes.size() - 3)), ErrorCode::kTruncated);
  EXPECT_EQ(code_of(bytes.substr(0, 10)), ErrorCode::kTruncated);

  std::string bad_version = bytes;
  bad_version[8] = 7;
  EXPECT_EQ(code_of(bad_version), ErrorCode::kVersionMismatch);

  std::string bad_header = bytes;
  bad_header[20] = '#';
  EXPECT_EQ(code_of(bad_header), ErrorCode::kHeaderParse);

  EXPECT_EQ(code_of(bytes + "xxxxxxxx"), ErrorCode::kHeaderMismatch);
  EXPECT_EQ(code_of("NOTACONTAINER-------------"), ErrorCode::kHeaderParse);
  EXPECT_THROW(decode_container(bytes, "dataset"), Error);
}

TEST(Params, StoreAndLoad) {
  ParamSet p;
  auto rng = make_rng(3);
  p.add("w", glorot({4, 5}, rng));
  p.add("b", Tensor({5}));
  Container c;
  c.kind = "checkpoint";
  p.store(c, "net.");
  c.add("other", Tensor({1}));
  ParamSet back = ParamSet::load(c, "net.");
  EXPECT_EQ(back.names(), p.names());
  EXPECT_EQ(back.at("w"), p.at("w"));
  EXPECT_THROW(p.add("w", Tensor({1})), Error);
}
