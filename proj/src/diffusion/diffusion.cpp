// Copyright 2026 The Appa Toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffusion/diffusion.hpp"

#include <cmath>
#include <memory>
#include <numbers>

#include <Eigen/Dense>

#include "core/error.hpp"
#include "core/rng.hpp"

namespace appa::diffusion {
namespace {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Tensor tile(const std::vector<double>& per_sample, std::size_t width) {
  Tensor out({per_sample.size(), width});
  for (std::size_t b = 0; b < per_sample.size(); ++b)
    for (std::size_t i = 0; i < width; ++i) out[b * width + i] = per_sample[b];
  return out;
}

Tensor tile_rows(const Tensor& row, std::size_t n) {
  Tensor out({n, row.size()});
  for (std::size_t b = 0; b < n; ++b)
    std::copy(row.data().begin(), row.data().end(), out.data().begin() + static_cast<long>(b * row.size()));
  return out;
}

void add_dense(ParamSet& p, const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng,
               double gain = 1.0) {
  p.add(name + ".w", glorot({in, out}, rng) * gain);
  p.add(name + ".b", Tensor({out}));
}

void add_conv(ParamSet& p, const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng,
              double gain = 1.0) {
  p.add(name + ".w", glorot({3, 3, in, out}, rng) * gain);
  p.add(name + ".b", Tensor({out}));
}

ad::Var conv(ad::Var x, const BoundParams& p, const std::string& name) {
  return ad::conv2d(x, p[name + ".w"], p[name + ".b"], 1, ad::Padding::kPeriodic, ad::Padding::kPeriodic);
}

// [B, C] per-sample values broadcast over a [B, h, w, C] grid.
ad::Var broadcast_grid(ad::Var v, std::size_t h, std::size_t w) {
  const Shape s = v.shape();
  const std::size_t b = s[0], c = s[1];
  auto idx = std::make_shared<std::vector<std::size_t>>();
  idx->reserve(b * h * w * c);
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t q = 0; q < h * w; ++q)
      for (std::size_t k = 0; k < c; ++k) idx->push_back(n * c + k);
  return ad::gather(v, idx, {b, h, w, c});
}

// [B, W, h, w, c] <-> [B, h, w, W c] index maps.
std::shared_ptr<const std::vector<std::size_t>> window_to_channels(std::size_t b, std::size_t win, std::size_t h,
                                                                   std::size_t w, std::size_t c) {
  auto idx = std::make_shared<std::vector<std::size_t>>();
  idx->reserve(b * win * h * w * c);
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        for (std::size_t t = 0; t < win; ++t)
          for (std::size_t k = 0; k < c; ++k) idx->push_back((((n * win + t) * h + y) * w + x) * c + k);
  return idx;
}

std::shared_ptr<const std::vector<std::size_t>> channels_to_window(std::size_t b, std::size_t win, std::size_t h,
                                                                   std::size_t w, std::size_t c) {
  const auto fwd = window_to_channels(b, win, h, w, c);
  auto inv = std::make_shared<std::vector<std::size_t>>(fwd->size());
  for (std::size_t i = 0; i < fwd->size(); ++i) (*inv)[(*fwd)[i]] = i;
  return inv;
}

}  // namespace

double Schedule::sigma(double t) const {
  check(t >= 0.0 && t <= 1.0, ErrorCode::kInvalidArgument, "diffusion time {} outside [0, 1]", t);
  if (t == 1.0) return sigma_max;
  if (t == 0.0) return sigma_min;
  return std::exp(std::log(sigma_min) + t * (std::log(sigma_max) - std::log(sigma_min)));
}

void Schedule::validate() const {
  check(sigma_min > 0.0 && sigma_min < sigma_max && std::isfinite(sigma_max), ErrorCode::kConfig,
        "noise range needs 0 < sigma_min < sigma_max, got [{}, {}]", sigma_min, sigma_max);
}

nlohmann::json Schedule::to_json() const { return {{"sigma_min", sigma_min}, {"sigma_max", sigma_max}}; }

Schedule Schedule::from_json(const nlohmann::json& j) {
  Schedule s;
  s.sigma_min = j.value("sigma_min", s.sigma_min);
  s.sigma_max = j.value("sigma_max", s.sigma_max);
  s.validate();
  return s;
}

Tensor perturb(const Tensor& z, double sigma, std::mt19937_64& rng) { return z + randn(z.shape(), rng) * sigma; }

Tensor Denoiser::denoise(const Tensor& z, double sigma, std::int64_t t0) const {
  ad::Graph g;
  return denoise(g, g.constant(z), sigma, t0).value();
}

Tensor score_from_denoised(const Tensor& denoised, const Tensor& z, double sigma) {
  check(sigma > 0.0, ErrorCode::kInvalidArgument, "score needs sigma > 0");
  require_same_shape(denoised, z, "score");
  Tensor out(z.shape());
  const double inv = 1.0 / (sigma * sigma);
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = (denoised[i] - z[i]) * inv;
  return out;
}

Tensor score_from_denoiser(const Denoiser& denoiser, const Tensor& z, double sigma, std::int64_t t0) {
  check(sigma > 0.0, ErrorCode::kInvalidArgument, "score needs sigma > 0");
  return score_from_denoised(denoiser.denoise(z, sigma, t0), z, sigma);
}

// ---------------------------------------------------------------------------

GaussianDenoiser::GaussianDenoiser(Tensor mean, const Tensor& cov, std::size_t rows, std::size_t dim)
    : rows_(rows), dim_(dim), mean_(std::move(mean)), cov_(cov) {
  const std::size_t n = rows * dim;
  check(n >= 1 && mean_.size() == n && cov.shape() == Shape{n, n}, ErrorCode::kShapeMismatch,
        "gaussian prior of {} values with covariance {} for {}x{} windows", mean_.size(), shape_string(cov.shape()),
        rows, dim);
  mean_ = mean_.reshaped({n});
  Eigen::Map<const Matrix> c(cov.data().data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  const Matrix sym = 0.5 * (c + c.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
  check(eig.info() == Eigen::Success, ErrorCode::kNumerical, "eigendecomposition of the prior covariance failed");
  check(eig.eigenvalues().minCoeff() >= -1e-10 * std::max(1.0, eig.eigenvalues().maxCoeff()),
        ErrorCode::kInvalidArgument, "prior covariance is not positive semi-definite");
  basis_ = Tensor({n, n});
  eigen_ = Tensor({n});
  const Matrix u = eig.eigenvectors();
  std::copy(u.data(), u.data() + u.size(), basis_.data().begin());
  for (std::size_t i = 0; i < n; ++i) eigen_[i] = std::max(0.0, eig.eigenvalues()[static_cast<Eigen::Index>(i)]);
}

ad::Var GaussianDenoiser::denoise(ad::Graph& g, ad::Var z, double sigma, std::int64_t) const {
  const std::size_t n = rows_ * dim_;
  check(z.shape() == Shape{rows_, dim_}, ErrorCode::kShapeMismatch, "gaussian denoiser expects [{}, {}], got {}",
        rows_, dim_, shape_string(z.shape()));
  check(sigma >= 0.0, ErrorCode::kInvalidArgument, "negative noise level");
  Tensor shrink({1, n});
  for (std::size_t i = 0; i < n; ++i) shrink[i] = eigen_[i] / (eigen_[i] + sigma * sigma);
  Tensor basis_t({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) basis_t[j * n + i] = basis_[i * n + j];
  Tensor neg_mean = mean_.reshaped({1, n}) * -1.0;
  ad::Var centered = ad::add_const(ad::reshape(z, {1, n}), neg_mean);
  ad::Var proj = ad::mul_const(ad::matmul(centered, g.constant(basis_)), shrink);
  ad::Var back = ad::add_const(ad::matmul(proj, g.constant(std::move(basis_t))), mean_.reshaped({1, n}));
  return ad::reshape(back, {rows_, dim_});
}

Tensor GaussianDenoiser::direct_score(const Tensor& z, double sigma) const {
  const auto n = static_cast<Eigen::Index>(rows_ * dim_);
  Eigen::Map<const Matrix> c(cov_.data().data(), n, n);
  const Matrix a = c + sigma * sigma * Matrix::Identity(n, n);
  Eigen::VectorXd r(n);
  for (Eigen::Index i = 0; i < n; ++i) r[i] = z[static_cast<std::size_t>(i)] - mean_[static_cast<std::size_t>(i)];
  const Eigen::VectorXd s = -a.ldlt().solve(r);
  Tensor out(z.shape());
  for (Eigen::Index i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = s[i];
  return out;
}

// ---------------------------------------------------------------------------

Architecture parse_architecture(const std::string& name) {
  if (name == "mlp") return Architecture::kMlp;
  if (name == "conv") return Architecture::kConv;
  fail(ErrorCode::kConfig, "unknown denoiser architecture '{}'", name);
}

const char* to_string(Architecture arch) { return arch == Architecture::kMlp ? "mlp" : "conv"; }

nlohmann::json DenoiserConfig::to_json() const {
  return {{"arch", to_string(arch)},   {"window", window},
          {"hidden", hidden},          {"blocks", blocks},
          {"embedding", embedding},    {"clock_period", clock_period},
          {"loss_weighting", loss_weighting},
          {"lr", lr},                  {"steps", steps},
          {"batch", batch},            {"micro_batch", micro_batch}};
}

DenoiserConfig DenoiserConfig::from_json(const nlohmann::json& j) {
  DenoiserConfig c;
  c.arch = parse_architecture(j.value("arch", std::string("mlp")));
  c.window = j.value("window", c.window);
  c.hidden = j.value("hidden", c.hidden);
  c.blocks = j.value("blocks", c.blocks);
  c.embedding = j.value("embedding", c.embedding);
  c.clock_period = j.value("clock_period", c.clock_period);
  c.loss_weighting = j.value("loss_weighting", c.loss_weighting);
  c.lr = j.value("lr", c.lr);
  c.steps = j.value("steps", c.steps);
  c.batch = j.value("batch", c.batch);
  c.micro_batch = j.value("micro_batch", c.micro_batch);
  check(c.window >= 2, ErrorCode::kConfig, "window must be >= 2, got {}", c.window);
  check(c.hidden >= 1 && c.embedding >= 2, ErrorCode::kConfig, "hidden and embedding sizes must be positive");
  check(c.loss_weighting == "none" || c.loss_weighting == "edm", ErrorCode::kConfig,
        "loss_weighting must be 'none' or 'edm', got '{}'", c.loss_weighting);
  check(c.batch >= 1 && c.micro_batch >= 1 && c.lr > 0.0, ErrorCode::kConfig, "invalid optimizer settings");
  return c;
}

NetworkDenoiser::NetworkDenoiser(const DenoiserConfig& config, const Shape& latent_shape, std::uint64_t seed)
    : config_(config), latent_shape_(latent_shape) {
  check(config.window >= 2, ErrorCode::kConfig, "window must be >= 2");
  const std::size_t d = numel(latent_shape);
  check(d >= 1, ErrorCode::kShapeMismatch, "empty latent shape");
  latent_mean_ = Tensor({d});
  auto rng = make_rng(seed, 0x64656e00);
  const std::size_t hid = config.hidden, win = config.window;
  add_dense(params_, "emb", feature_dim(), hid, rng);
  if (config.arch == Architecture::kMlp) {
    add_dense(params_, "in", win * d, hid, rng);
    params_.add("in.e", glorot({hid, hid}, rng));
    for (std::size_t k = 0; k < config.blocks; ++k) {
      const std::string b = "block" + std::to_string(k);
      add_dense(params_, b + ".l1", hid, hid, rng);
      params_.add(b + ".e", glorot({hid, hid}, rng));
      params_.add(b + ".s", glorot({hid, hid}, rng) * 0.1);
      add_dense(params_, b + ".l2", hid, hid, rng, 0.1);
    }
    add_dense(params_, "out", hid, win * d, rng, 0.1);
  } else {
    check(latent_shape.size() == 3, ErrorCode::kConfig, "conv denoiser needs [h, w, c] latents, got {}",
          shape_string(latent_shape));
    const std::size_t c = latent_shape[2];
    add_conv(params_, "in", win * c, hid, rng);
    params_.add("in.e", glorot({hid, hid}, rng));
    for (std::size_t k = 0; k < config.blocks; ++k) {
      const std::string b = "block" + std::to_string(k);
      add_conv(params_, b + ".l1", hid, hid, rng);
      params_.add(b + ".e", glorot({hid, hid}, rng));
      params_.add(b + ".s", glorot({hid, hid}, rng) * 0.1);
      add_conv(params_, b + ".l2", hid, hid, rng, 0.1);
    }
    add_conv(params_, "out", hid, win * c, rng, 0.1);
  }
}

std::size_t NetworkDenoiser::feature_dim() const {
  return config_.embedding + 1 + (config_.clock_period > 0 ? 2 * config_.window : 0);
}

Tensor NetworkDenoiser::features(const std::vector<double>& sigma, const std::vector<std::int64_t>& t0) const {
  const std::size_t b = sigma.size(), f = feature_dim(), half = config_.embedding / 2;
  Tensor out({b, f});
  for (std::size_t n = 0; n < b; ++n) {
    double* row = out.data().data() + n * f;
    const double c_noise = std::log(sigma[n] / latent_scale_) / 4.0;
    for (std::size_t k = 0; k < half; ++k) {
      const double w = std::numbers::pi / 2.0 * static_cast<double>(k + 1);
      row[2 * k] = std::sin(w * c_noise);
      row[2 * k + 1] = std::cos(w * c_noise);
    }
    row[config_.embedding] = c_noise;
    if (config_.clock_period > 0) {
      const double period = static_cast<double>(config_.clock_period);
      for (std::size_t i = 0; i < config_.window; ++i) {
        const double phase = 2.0 * std::numbers::pi * static_cast<double>(t0[n] + static_cast<std::int64_t>(i)) / period;
        row[config_.embedding + 1 + 2 * i] = std::sin(phase);
        row[config_.embedding + 2 + 2 * i] = std::cos(phase);
      }
    }
  }
  return out;
}

ad::Var NetworkDenoiser::forward(ad::Var z, const std::vector<double>& sigma, const std::vector<std::int64_t>& t0,
                                 const BoundParams& p) const {
  const std::size_t d = step_dim(), win = config_.window, wd = win * d;
  const std::size_t b = sigma.size();
  check(z.shape() == Shape{b, win, d}, ErrorCode::kShapeMismatch, "denoiser expects [{}, {}, {}], got {}", b, win, d,
        shape_string(z.shape()));
  check(t0.size() == b, ErrorCode::kShapeMismatch, "{} clock offsets for {} samples", t0.size(), b);
  std::vector<double> c_in(b), c_skip(b), c_out(b);
  for (std::size_t n = 0; n < b; ++n) {
    check(sigma[n] > 0.0 && std::isfinite(sigma[n]), ErrorCode::kInvalidArgument, "noise level must be positive");
    const double s = sigma[n] / latent_scale_;
    c_in[n] = 1.0 / std::sqrt(s * s + 1.0);
    c_skip[n] = 1.0 / (s * s + 1.0);
    c_out[n] = s / std::sqrt(s * s + 1.0);
  }
  ad::Graph& g = z.graph();
  const Tensor neg_mean = tile_rows(latent_mean_, win).reshaped({wd}) * -1.0;
  ad::Var zn = ad::scale(ad::add_const(ad::reshape(z, {b, wd}), tile_rows(neg_mean, b)), 1.0 / latent_scale_);
  ad::Var x = ad::mul_const(zn, tile(c_in, wd));
  ad::Var e = ad::gelu(ad::affine(g.constant(features(sigma, t0)), p["emb.w"], p["emb.b"]));

  ad::Var f;
  if (config_.arch == Architecture::kMlp) {
    ad::Var h = ad::add(ad::affine(x, p["in.w"], p["in.b"]), ad::matmul(e, p["in.e"]));
    for (std::size_t k = 0; k < config_.blocks; ++k) {
      const std::string name = "block" + std::to_string(k);
      ad::Var u = ad::affine(ad::gelu(h), p[name + ".l1.w"], p[name + ".l1.b"]);
      u = ad::add(u, ad::mul(u, ad::matmul(e, p[name + ".s"])));
      u = ad::gelu(ad::add(u, ad::matmul(e, p[name + ".e"])));
      h = ad::add(h, ad::affine(u, p[name + ".l2.w"], p[name + ".l2.b"]));
    }
    f = ad::affine(ad::gelu(h), p["out.w"], p["out.b"]);
  } else {
    const std::size_t hh = latent_shape_[0], ww = latent_shape_[1], c = latent_shape_[2];
    ad::Var grid = ad::gather(x, window_to_channels(b, win, hh, ww, c), {b, hh, ww, win * c});
    ad::Var h = ad::add(conv(grid, p, "in"), broadcast_grid(ad::matmul(e, p["in.e"]), hh, ww));
    for (std::size_t k = 0; k < config_.blocks; ++k) {
      const std::string name = "block" + std::to_string(k);
      ad::Var u = conv(ad::gelu(h), p, name + ".l1");
      u = ad::add(u, ad::mul(u, broadcast_grid(ad::matmul(e, p[name + ".s"]), hh, ww)));
      u = ad::gelu(ad::add(u, broadcast_grid(ad::matmul(e, p[name + ".e"]), hh, ww)));
      h = ad::add(h, conv(u, p, name + ".l2"));
    }
    ad::Var out = conv(ad::gelu(h), p, "out");
    f = ad::gather(out, channels_to_window(b, win, hh, ww, c), {b, wd});
  }
  ad::Var dn = ad::add(ad::mul_const(zn, tile(c_skip, wd)), ad::mul_const(f, tile(c_out, wd)));
  ad::Var out = ad::add_const(ad::scale(dn, latent_scale_), tile_rows(neg_mean, b) * -1.0);
  return ad::reshape(out, {b, win, d});
}

ad::Var NetworkDenoiser::denoise(ad::Graph& g, ad::Var z, double sigma, std::int64_t t0) const {
  check(z.shape() == Shape{config_.window, step_dim()}, ErrorCode::kShapeMismatch,
        "denoiser expects [{}, {}], got {}", config_.window, step_dim(), shape_string(z.shape()));
  const BoundParams p(g, params_, false);
  ad::Var out = forward(ad::reshape(z, {1, config_.window, step_dim()}), {sigma}, {t0}, p);
  return ad::reshape(out, {config_.window, step_dim()});
}

void NetworkDenoiser::fit_normalization(const Tensor& latents) {
  const std::size_t d = step_dim();
  check(latents.size() > 0 && latents.size() % d == 0, ErrorCode::kShapeMismatch, "latents {} for step size {}",
        shape_string(latents.shape()), d);
  const std::size_t count = latents.size() / d;
  latent_mean_ = Tensor({d});
  for (std::size_t i = 0; i < latents.size(); ++i) latent_mean_[i % d] += latents[i];
  latent_mean_ *= 1.0 / static_cast<double>(count);
  double sq = 0.0;
  for (std::size_t i = 0; i < latents.size(); ++i) sq += std::pow(latents[i] - latent_mean_[i % d], 2);
  latent_scale_ = std::sqrt(sq / static_cast<double>(latents.size()));
  check(latent_scale_ > 0.0 && std::isfinite(latent_scale_), ErrorCode::kInvalidArgument,
        "latents have zero variance; cannot normalize");
}

void NetworkDenoiser::store(Container& out) const {
  out.meta["denoiser"] = {{"config", config_.to_json()},
                          {"latent_shape", latent_shape_},
                          {"latent_scale", latent_scale_}};
  out.add("den_norm/mean", latent_mean_);
  params_.store(out, "den/");
}

NetworkDenoiser NetworkDenoiser::load(const Container& in) {
  try {
    const auto& m = in.meta.at("denoiser");
    NetworkDenoiser model(DenoiserConfig::from_json(m.at("config")), m.at("latent_shape").get<Shape>(), 0);
    model.latent_scale_ = m.at("latent_scale").get<double>();
    model.latent_mean_ = in.tensor("den_norm/mean");
    const ParamSet stored = ParamSet::load(in, "den/");
    check(stored.names() == model.params_.names(), ErrorCode::kHeaderMismatch,
          "denoiser parameters do not match its config");
    for (std::size_t i = 0; i < stored.size(); ++i)
      check(stored.values()[i].shape() == model.params_.values()[i].shape(), ErrorCode::kHeaderMismatch,
            "parameter '{}' has shape {}", stored.names()[i], shape_string(stored.values()[i].shape()));
    check(model.latent_mean_.size() == model.step_dim(), ErrorCode::kHeaderMismatch, "latent mean has {} values",
          model.latent_mean_.size());
    model.params_ = stored;
    return model;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kHeaderParse, "malformed denoiser header: {}", e.what());
  }
}

namespace {

struct WindowBatch {
  Tensor clean;  // [B, W, D]
  Tensor noisy;
  std::vector<double> sigma;
  std::vector<std::int64_t> t0;
};

WindowBatch draw_windows(const Tensor& latents, std::size_t window, std::size_t count, const Schedule& schedule,
                         std::mt19937_64& rng) {
  const std::size_t n = latents.dim(0), len = latents.dim(1), d = latents.size() / (n * len);
  std::uniform_int_distribution<std::size_t> traj(0, n - 1), start(0, len - window);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  WindowBatch b{Tensor({count, window, d}), Tensor({count, window, d}), {}, {}};
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t k = traj(rng), s = start(rng);
    const double sigma = schedule.sigma(unit(rng));
    const auto src = latents.data().begin() + static_cast<long>((k * len + s) * d);
    std::copy(src, src + static_cast<long>(window * d), b.clean.data().begin() + static_cast<long>(i * window * d));
    b.sigma.push_back(sigma);
    b.t0.push_back(static_cast<std::int64_t>(s));
  }
  std::normal_distribution<double> normal;
  for (std::size_t i = 0; i < count; ++i)
    for (std::size_t j = 0; j < window * d; ++j) {
      const std::size_t at = i * window * d + j;
      b.noisy[at] = b.clean[at] + b.sigma[i] * normal(rng);
    }
  return b;
}

void check_latents(const Tensor& latents, const NetworkDenoiser& model) {
  check(latents.rank() >= 3 && latents.size() == latents.dim(0) * latents.dim(1) * model.step_dim(),
        ErrorCode::kShapeMismatch, "latent trajectories {} do not have step size {}", shape_string(latents.shape()),
        model.step_dim());
  check(model.window() <= latents.dim(1), ErrorCode::kInvalidArgument, "window {} exceeds trajectory length {}",
        model.window(), latents.dim(1));
}

}  // namespace

double denoising_loss(const NetworkDenoiser& model, const Tensor& latents, const Schedule& schedule,
                      std::size_t draws, std::uint64_t seed) {
  check_latents(latents, model);
  auto rng = make_rng(seed, 0x76616c);
  const WindowBatch b = draw_windows(latents, model.window(), draws, schedule, rng);
  double total = 0.0;
  const std::size_t chunk = 16;
  for (std::size_t s = 0; s < draws; s += chunk) {
    const std::size_t e = std::min(draws, s + chunk);
    ad::Graph g;
    const BoundParams p(g, model.params(), false);
    const std::size_t per = model.window() * model.step_dim();
    Tensor z({e - s, model.window(), model.step_dim()});
    std::copy(b.noisy.data().begin() + static_cast<long>(s * per), b.noisy.data().begin() + static_cast<long>(e * per),
              z.data().begin());
    const std::vector<double> sig(b.sigma.begin() + static_cast<long>(s), b.sigma.begin() + static_cast<long>(e));
    const std::vector<std::int64_t> t0(b.t0.begin() + static_cast<long>(s), b.t0.begin() + static_cast<long>(e));
    const Tensor d = model.forward(g.constant(z), sig, t0, p).value();
    for (std::size_t i = 0; i < d.size(); ++i) total += std::pow(d[i] - b.clean[s * per + i], 2);
  }
  return total / static_cast<double>(b.clean.size());
}

DenoiserReport train_denoiser(NetworkDenoiser& model, const Tensor& latents, const Tensor& val,
                              const Schedule& schedule, std::uint64_t seed, std::size_t threads, TrainState* state,
                              const std::function<void(const TrainState&)>& checkpoint) {
  schedule.validate();
  check_latents(latents, model);
  const auto& cfg = model.config();
  TrainState local;
  TrainState& st = state ? *state : local;
  if (st.params.size() == 0) {
    model.fit_normalization(latents);
    st.params = model.params();
    st.adam = AdamState::for_params(st.params.values(), cfg.lr);
  }
  const std::size_t chunks = (cfg.batch + cfg.micro_batch - 1) / cfg.micro_batch;
  const std::size_t per = model.window() * model.step_dim();
  const bool edm = cfg.loss_weighting == "edm";
  const double s2 = model.latent_scale() * model.latent_scale();
  run_adam(
      st, cfg.steps,
      [&](std::uint64_t step, std::vector<Tensor>& grads) {
        auto rng = make_rng(seed, step);
        std::vector<WindowBatch> batches;
        for (std::size_t c = 0; c < chunks; ++c)
          batches.push_back(draw_windows(latents, model.window(),
                                         std::min(cfg.micro_batch, cfg.batch - c * cfg.micro_batch), schedule, rng));
        return accumulate_gradients(chunks, threads, st.params, [&](std::size_t c, std::vector<Tensor>& g) {
          const WindowBatch& b = batches[c];
          const std::size_t m = b.sigma.size();
          std::vector<double> weight(m, 1.0);
          if (edm)
            for (std::size_t i = 0; i < m; ++i) weight[i] = (b.sigma[i] * b.sigma[i] + s2) / (b.sigma[i] * b.sigma[i] * s2);
          Tensor wt = tile(weight, per);
          wt *= 1.0 / static_cast<double>(m * per);
          ad::Graph graph;
          const BoundParams p(graph, st.params, true);
          ad::Var d = model.forward(graph.constant(b.noisy), b.sigma, b.t0, p);
          ad::Var diff = ad::reshape(ad::add_const(d, b.clean * -1.0), {m, per});
          ad::Var loss = ad::sum(ad::mul_const(ad::mul(diff, diff), wt));
          graph.backward(loss);
          for (std::size_t k = 0; k < g.size(); ++k) g[k] = graph.grad(p.vars()[k]);
          return loss.value().item();
        }, grads);
      },
      [&](const TrainState& s) {
        model.params() = s.params;
        if (checkpoint) checkpoint(s);
      },
      true);
  model.params() = st.params;
  DenoiserReport report;
  report.losses = st.losses;
  report.val_loss = denoising_loss(model, val.size() > 0 ? val : latents, schedule, 256, seed);
  return report;
}

void save_denoiser(const NetworkDenoiser& model, const Schedule& schedule, const std::filesystem::path& path,
                   const nlohmann::json& provenance) {
  Container c;
  c.kind = "denoiser";
  model.store(c);
  c.meta["schedule"] = schedule.to_json();
  if (!provenance.is_null()) c.meta["provenance"] = provenance;
  write_container(path, c);
}

NetworkDenoiser load_denoiser(const std::filesystem::path& path, Schedule* schedule) {
  const Container c = read_container(path, "denoiser");
  if (schedule) {
    try {
      *schedule = Schedule::from_json(c.meta.at("schedule"));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::kHeaderParse, "malformed schedule: {}", e.what());
    }
  }
  return NetworkDenoiser::load(c);
}

// ---------------------------------------------------------------------------

std::vector<double> sampling_sigmas(const Schedule& schedule, std::size_t steps) {
  check(steps >= 1, ErrorCode::kInvalidArgument, "sampler needs at least one step");
  std::vector<double> out;
  for (std::size_t k = steps; k >= 1; --k)
    out.push_back(schedule.sigma(static_cast<double>(k) / static_cast<double>(steps)));
  return out;
}

Tensor sample(const DenoiseStep& denoise, const Schedule& schedule, const Shape& shape, const SamplerConfig& cfg,
              std::mt19937_64& rng) {
  schedule.validate();
  check(cfg.churn >= 0.0 && cfg.churn <= 1.0, ErrorCode::kInvalidArgument, "churn must be in [0, 1]");
  const std::vector<double> sigmas = sampling_sigmas(schedule, cfg.steps);
  Tensor z = randn(shape, rng) * schedule.sigma_max;
  check(cfg.order == 1 || cfg.order == 2, ErrorCode::kInvalidArgument, "sampler order must be 1 or 2");
  check(cfg.delta > 0.0 && cfg.delta < 1.0, ErrorCode::kInvalidArgument, "corrector delta must be in (0, 1)");
  const bool multistep = cfg.order == 2 && cfg.churn == 0.0 && cfg.corrections == 0;
  Tensor previous;
  std::normal_distribution<double> normal;
  for (std::size_t k = 0; k < sigmas.size(); ++k) {
    const double s = sigmas[k];
    const double next = k + 1 < sigmas.size() ? sigmas[k + 1] : 0.0;
    Tensor d = denoise(z, s, k);
    check(d.shape() == z.shape(), ErrorCode::kShapeMismatch, "denoiser returned {} for {}", shape_string(d.shape()),
          shape_string(z.shape()));
    check(d.all_finite(), ErrorCode::kNumerical, "non-finite denoiser output at sampling step {} (sigma {})", k, s);
    if (next == 0.0) {
      z = std::move(d);
      continue;
    }
    if (multistep) {
      const double h = std::log(s / next);
      Tensor current = d;
      if (k > 0) {
        const double r = std::log(sigmas[k - 1] / s) / h;
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += (d[i] - previous[i]) / (2.0 * r);
      }
      previous = std::move(current);
    }
    double c = next / s, noise = 0.0;
    if (cfg.churn > 0.0) {
      noise = cfg.churn * next * std::sqrt(1.0 - (next / s) * (next / s));
      c = std::sqrt(next * next - noise * noise) / s;
    }
    for (std::size_t i = 0; i < z.size(); ++i) {
      z[i] = d[i] + c * (z[i] - d[i]);
      if (noise > 0.0) z[i] += noise * normal(rng);
    }
    for (std::size_t c = 0; c < cfg.corrections; ++c) {
      const Tensor dc = denoise(z, next, k + 1);
      const double scale = std::sqrt(2.0 * cfg.delta) * next;
      for (std::size_t i = 0; i < z.size(); ++i) z[i] += cfg.delta * (dc[i] - z[i]) + scale * normal(rng);
    }
    check(z.all_finite(), ErrorCode::kNumerical, "non-finite state at sampling step {}", k);
  }
  return z;
}

Tensor sample_prior(const Denoiser& denoiser, const Schedule& schedule, std::size_t rows, const SamplerConfig& cfg,
                    std::uint64_t seed, std::int64_t t0) {
  check(denoiser.window() == 0 || denoiser.window() == rows, ErrorCode::kShapeMismatch,
        "denoiser handles {} rows, asked for {}", denoiser.window(), rows);
  auto rng = make_rng(seed);
  return sample(
      [&](const Tensor& z, double sigma, std::size_t) { return denoiser.denoise(z, sigma, t0); }, schedule,
      {rows, denoiser.step_dim()}, cfg, rng);
}

}  // namespace appa::diffusion
