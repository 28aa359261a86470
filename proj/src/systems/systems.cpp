// Copyright 2026 The Appa Toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "systems/systems.hpp"

#include <cmath>
#include <complex>
#include <limits>
#include <numbers>

#include <Eigen/Dense>

#include "core/container.hpp"
#include "core/error.hpp"
#include "core/fft.hpp"
#include "core/parallel.hpp"
#include "core/rng.hpp"

namespace appa::systems {
namespace {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<const Matrix>;
using Vec = Eigen::VectorXd;

MatrixMap as_matrix(const Tensor& t) {
  return MatrixMap(t.data().data(), static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1)));
}

Tensor from_matrix(const Matrix& m) {
  Tensor out({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  std::copy(m.data(), m.data() + m.size(), out.data().begin());
  return out;
}

// Symmetric square root with negative eigenvalues clamped, so that PSD
// (possibly singular) covariances are accepted.
Matrix psd_sqrt(const Matrix& c) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(c);
  Vec d = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * d.asDiagonal() * eig.eigenvectors().transpose();
}

void lorenz96_tendency(std::span<const double> x, double forcing, std::span<double> out) {
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double xp1 = x[(i + 1) % n];
    const double xm1 = x[(i + n - 1) % n];
    const double xm2 = x[(i + n - 2) % n];
    out[i] = (xp1 - xm2) * xm1 - x[i] + forcing;
  }
}

// One RK4 step of each independent ring (rows of length width).
void lorenz96_step(const SystemSpec& spec, std::vector<double>& x) {
  const std::size_t n = spec.width;
  const double h = spec.dt / static_cast<double>(spec.substeps);
  std::vector<double> k1(n), k2(n), k3(n), k4(n), tmp(n);
  for (std::size_t ring = 0; ring * n < x.size(); ++ring) {
    std::span<double> s(x.data() + ring * n, n);
    for (std::size_t sub = 0; sub < spec.substeps; ++sub) {
      lorenz96_tendency(s, spec.forcing, k1);
      for (std::size_t i = 0; i < n; ++i) tmp[i] = s[i] + 0.5 * h * k1[i];
      lorenz96_tendency(tmp, spec.forcing, k2);
      for (std::size_t i = 0; i < n; ++i) tmp[i] = s[i] + 0.5 * h * k2[i];
      lorenz96_tendency(tmp, spec.forcing, k3);
      for (std::size_t i = 0; i < n; ++i) tmp[i] = s[i] + h * k3[i];
      lorenz96_tendency(tmp, spec.forcing, k4);
      for (std::size_t i = 0; i < n; ++i) s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
  }
}

class Stepper {
 public:
  explicit Stepper(const SystemSpec& spec) : spec_(spec) {
    if (spec.kind == SystemKind::kLinearGaussian) {
      transition_ = as_matrix(spec.transition);
      noise_sqrt_ = psd_sqrt(as_matrix(spec.process_cov));
    } else if (spec.kind == SystemKind::kAdvection2d) {
      fft_ = std::make_unique<Fft2>(spec.height, spec.width);
      const std::size_t hw = fft_->half_width();
      propagator_.resize(spec.height * hw);
      forcing_gain_.resize(spec.height * hw);
      const double two_pi = 2.0 * std::numbers::pi;
      for (std::size_t r = 0; r < spec.height; ++r) {
        for (std::size_t c = 0; c < hw; ++c) {
          const double ky = static_cast<double>(signed_frequency(r, spec.height));
          const double kx = static_cast<double>(c);
          const double wy = two_pi * ky / static_cast<double>(spec.height);
          const double wx = two_pi * kx / static_cast<double>(spec.width);
          // Exact transport as a phase shift, implicit drag and diffusion.
          const double phase = -(wx * spec.velocity_x + wy * spec.velocity_y) * spec.dt;
          const double damp = 1.0 + (spec.drag + spec.diffusivity * (wx * wx + wy * wy)) * spec.dt;
          propagator_[r * hw + c] = std::polar(1.0 / damp, phase);
          const double k2 = kx * kx + ky * ky;
          forcing_gain_[r * hw + c] =
              k2 == 0.0 ? 0.0
                        : spec.forcing_amplitude * std::sqrt(spec.dt) *
                              std::exp(-k2 / (2.0 * spec.forcing_scale * spec.forcing_scale));
        }
      }
    }
  }

  void step(std::vector<double>& x, std::mt19937_64& rng) {
    switch (spec_.kind) {
      case SystemKind::kLorenz96:
        lorenz96_step(spec_, x);
        break;
      case SystemKind::kLinearGaussian: {
        Eigen::Map<Vec> state(x.data(), static_cast<Eigen::Index>(x.size()));
        Vec noise(state.size());
        std::normal_distribution<double> normal;
        for (Eigen::Index i = 0; i < noise.size(); ++i) noise[i] = normal(rng);
        Vec next = transition_ * state + noise_sqrt_ * noise;
        state = next;
        break;
      }
      case SystemKind::kAdvection2d:
        advect(x, rng);
        break;
    }
  }

 private:
  void advect(std::vector<double>& x, std::mt19937_64& rng) {
    const std::size_t h = spec_.height, w = spec_.width, ch = spec_.channels;
    std::normal_distribution<double> normal;
    std::vector<double> field(h * w), noise(h * w);
    for (std::size_t c = 0; c < ch; ++c) {
      for (std::size_t p = 0; p < h * w; ++p) field[p] = x[p * ch + c];
      for (double& v : noise) v = normal(rng);
      auto spec = fft_->forward(field);
      const auto forcing = fft_->forward(noise);
      for (std::size_t k = 0; k < spec.size(); ++k) spec[k] = spec[k] * propagator_[k] + forcing[k] * forcing_gain_[k];
      field = fft_->inverse(spec);
      for (std::size_t p = 0; p < h * w; ++p) x[p * ch + c] = field[p];
    }
  }

  const SystemSpec& spec_;
  Matrix transition_;
  Matrix noise_sqrt_;
  std::unique_ptr<Fft2> fft_;
  std::vector<std::complex<double>> propagator_;
  std::vector<double> forcing_gain_;
};

Tensor simulate_with(const SystemSpec& spec, const Tensor& x0, std::size_t length, std::mt19937_64& rng,
                     std::size_t skip = 0) {
  spec.validate();
  check(x0.size() == spec.state_size(), ErrorCode::kShapeMismatch, "initial state has {} values, system needs {}",
        x0.size(), spec.state_size());
  check(length >= 1, ErrorCode::kInvalidArgument, "trajectory length must be >= 1");
  Stepper stepper(spec);
  std::vector<double> x(x0.values());
  for (std::size_t i = 0; i < skip; ++i) stepper.step(x, rng);
  Shape shape{length};
  for (std::size_t d : spec.state_shape()) shape.push_back(d);
  Tensor out(shape);
  const std::size_t n = spec.state_size();
  for (std::size_t i = 0; i < length; ++i) {
    if (i > 0) stepper.step(x, rng);
    for (std::size_t k = 0; k < n; ++k) {
      check(std::isfinite(x[k]), ErrorCode::kNumerical, "non-finite state at step {}", skip + i);
      out[i * n + k] = x[k];
    }
  }
  return out;
}

nlohmann::json tensor_json(const Tensor& t) {
  return {{"shape", t.shape()}, {"data", t.values()}};
}

Tensor tensor_from_json(const nlohmann::json& j) {
  return Tensor(j.at("shape").get<Shape>(), j.at("data").get<std::vector<double>>());
}

}  // namespace

const char* to_string(SystemKind kind) {
  switch (kind) {
    case SystemKind::kLinearGaussian:
      return "linear-gaussian";
    case SystemKind::kLorenz96:
      return "lorenz96";
    case SystemKind::kAdvection2d:
      return "advection2d";
  }
  return "?";
}

SystemKind parse_kind(const std::string& name) {
  if (name == "linear-gaussian") return SystemKind::kLinearGaussian;
  if (name == "lorenz96") return SystemKind::kLorenz96;
  if (name == "advection2d") return SystemKind::kAdvection2d;
  fail(ErrorCode::kConfig, "unknown system kind '{}'", name);
}

void SystemSpec::validate() const {
  check(dt > 0.0 && std::isfinite(dt), ErrorCode::kInvalidArgument, "dt must be positive, got {}", dt);
  check(height >= 1 && width >= 1 && channels >= 1, ErrorCode::kInvalidArgument, "state dims {}x{}x{}", height,
        width, channels);
  switch (kind) {
    case SystemKind::kLorenz96:
      check(width >= 4, ErrorCode::kInvalidArgument, "lorenz96 needs at least 4 variables");
      check(substeps >= 1, ErrorCode::kInvalidArgument, "substeps must be >= 1");
      break;
    case SystemKind::kLinearGaussian: {
      const std::size_t n = state_size();
      check(transition.shape() == Shape{n, n}, ErrorCode::kShapeMismatch, "transition {} for state size {}",
            shape_string(transition.shape()), n);
      check(process_cov.shape() == Shape{n, n}, ErrorCode::kShapeMismatch, "process covariance {} for state size {}",
            shape_string(process_cov.shape()), n);
      const MatrixMap q = as_matrix(process_cov);
      check((q - q.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + q.cwiseAbs().maxCoeff()),
            ErrorCode::kInvalidArgument, "process covariance is not symmetric");
      Eigen::SelfAdjointEigenSolver<Matrix> eig(q, Eigen::EigenvaluesOnly);
      check(eig.eigenvalues().minCoeff() >= -1e-10 * (1.0 + q.cwiseAbs().maxCoeff()), ErrorCode::kInvalidArgument,
            "process covariance is not positive semi-definite");
      break;
    }
    case SystemKind::kAdvection2d:
      check(diffusivity >= 0.0 && drag >= 0.0, ErrorCode::kInvalidArgument, "advection damping must be >= 0");
      break;
  }
}

nlohmann::json SystemSpec::to_json() const {
  nlohmann::json j = {{"kind", to_string(kind)}, {"height", height}, {"width", width},
                      {"channels", channels}, {"dt", dt}};
  switch (kind) {
    case SystemKind::kLorenz96:
      j["forcing"] = forcing;
      j["substeps"] = substeps;
      break;
    case SystemKind::kLinearGaussian:
      j["transition"] = tensor_json(transition);
      j["process_cov"] = tensor_json(process_cov);
      break;
    case SystemKind::kAdvection2d:
      j["velocity_x"] = velocity_x;
      j["velocity_y"] = velocity_y;
      j["diffusivity"] = diffusivity;
      j["drag"] = drag;
      j["forcing_amplitude"] = forcing_amplitude;
      j["forcing_scale"] = forcing_scale;
      break;
  }
  return j;
}

SystemSpec SystemSpec::from_json(const nlohmann::json& j) {
  SystemSpec s;
  s.kind = parse_kind(j.at("kind").get<std::string>());
  s.height = j.at("height").get<std::size_t>();
  s.width = j.at("width").get<std::size_t>();
  s.channels = j.at("channels").get<std::size_t>();
  s.dt = j.at("dt").get<double>();
  switch (s.kind) {
    case SystemKind::kLorenz96:
      s.forcing = j.at("forcing").get<double>();
      s.substeps = j.at("substeps").get<std::size_t>();
      break;
    case SystemKind::kLinearGaussian:
      s.transition = tensor_from_json(j.at("transition"));
      s.process_cov = tensor_from_json(j.at("process_cov"));
      break;
    case SystemKind::kAdvection2d:
      s.velocity_x = j.at("velocity_x").get<double>();
      s.velocity_y = j.at("velocity_y").get<double>();
      s.diffusivity = j.at("diffusivity").get<double>();
      s.drag = j.at("drag").get<double>();
      s.forcing_amplitude = j.at("forcing_amplitude").get<double>();
      s.forcing_scale = j.at("forcing_scale").get<double>();
      break;
  }
  s.validate();
  return s;
}

SystemSpec lorenz96(std::size_t dim, double forcing, double dt, std::size_t substeps) {
  SystemSpec s;
  s.kind = SystemKind::kLorenz96;
  s.width = dim;
  s.forcing = forcing;
  s.dt = dt;
  s.substeps = substeps;
  s.validate();
  return s;
}

SystemSpec linear_gaussian(std::size_t dim, double rho, double angle) {
  check(dim >= 1, ErrorCode::kInvalidArgument, "dimension must be >= 1");
  check(std::abs(rho) < 1.0, ErrorCode::kInvalidArgument, "|rho| must be < 1 for a stationary system");
  Matrix r = Matrix::Identity(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i + 1 < dim; ++i) {
    const auto a = static_cast<Eigen::Index>(i);
    Matrix g = Matrix::Identity(r.rows(), r.cols());
    g(a, a) = std::cos(angle);
    g(a, a + 1) = -std::sin(angle);
    g(a + 1, a) = std::sin(angle);
    g(a + 1, a + 1) = std::cos(angle);
    r = g * r;
  }
  SystemSpec s;
  s.kind = SystemKind::kLinearGaussian;
  s.width = dim;
  s.dt = 1.0;
  s.transition = from_matrix(rho * r);
  s.process_cov = from_matrix((1.0 - rho * rho) * Matrix::Identity(r.rows(), r.cols()));
  s.validate();
  return s;
}

SystemSpec advection2d(std::size_t height, std::size_t width, std::size_t channels) {
  SystemSpec s;
  s.kind = SystemKind::kAdvection2d;
  s.height = height;
  s.width = width;
  s.channels = channels;
  s.dt = 1.0;
  s.validate();
  return s;
}

Tensor stationary_covariance(const SystemSpec& spec) {
  check(spec.kind == SystemKind::kLinearGaussian, ErrorCode::kInvalidArgument,
        "stationary covariance needs a linear-gaussian system");
  spec.validate();
  // Doubling: P_{2k} = P_k + A_k P_k A_kᵀ, A_{2k} = A_k².
  Matrix a = as_matrix(spec.transition);
  Matrix p = as_matrix(spec.process_cov);
  for (int it = 0; it < 64; ++it) {
    Matrix next = p + a * p * a.transpose();
    a = a * a;
    const double change = (next - p).cwiseAbs().maxCoeff();
    p = next;
    if (change <= 1e-15 * (1.0 + p.cwiseAbs().maxCoeff())) break;
  }
  check(p.allFinite() && a.cwiseAbs().maxCoeff() < 1e-8, ErrorCode::kNumerical,
        "linear-gaussian system is not stable");
  return from_matrix(p);
}

Tensor initial_state(const SystemSpec& spec, std::mt19937_64& rng) {
  Tensor x(spec.state_shape());
  std::normal_distribution<double> normal;
  switch (spec.kind) {
    case SystemKind::kLinearGaussian: {
      const Matrix l = psd_sqrt(as_matrix(stationary_covariance(spec)));
      Vec e(l.rows());
      for (Eigen::Index i = 0; i < e.size(); ++i) e[i] = normal(rng);
      const Vec v = l * e;
      std::copy(v.data(), v.data() + v.size(), x.data().begin());
      break;
    }
    case SystemKind::kLorenz96:
      for (double& v : x.data()) v = spec.forcing + normal(rng);
      break;
    case SystemKind::kAdvection2d:
      break;
  }
  return x;
}

Tensor simulate(const SystemSpec& spec, const Tensor& x0, std::size_t length, std::uint64_t seed) {
  auto rng = make_rng(seed);
  return simulate_with(spec, x0, length, rng);
}

Tensor generate(const SystemSpec& spec, std::size_t count, std::size_t length, std::size_t burn_in,
                std::uint64_t seed, std::size_t threads) {
  spec.validate();
  check(count >= 1 && length >= 1, ErrorCode::kInvalidArgument, "need at least one trajectory of length >= 1");
  std::vector<Tensor> parts(count);
  parallel_for(count, threads, [&](std::size_t i) {
    auto rng = make_rng(seed, i);
    const Tensor x0 = initial_state(spec, rng);
    parts[i] = simulate_with(spec, x0, length, rng, burn_in);
  });
  return stack(parts);
}

nlohmann::json ChannelStats::to_json() const { return {{"mean", mean}, {"std", std}}; }

ChannelStats ChannelStats::from_json(const nlohmann::json& j) {
  ChannelStats s{j.at("mean").get<std::vector<double>>(), j.at("std").get<std::vector<double>>()};
  check(s.mean.size() == s.std.size() && !s.mean.empty(), ErrorCode::kHeaderMismatch, "malformed channel stats");
  return s;
}

ChannelStats channel_stats(const Tensor& raw) {
  check(raw.rank() >= 1 && raw.size() > 0, ErrorCode::kInvalidArgument, "channel stats of an empty tensor");
  const std::size_t c = raw.shape().back();
  std::vector<double> sum(c, 0.0), count(c, 0.0);
  for (std::size_t i = 0; i < raw.size(); ++i)
    if (!std::isnan(raw[i])) {
      sum[i % c] += raw[i];
      count[i % c] += 1.0;
    }
  ChannelStats s{std::vector<double>(c), std::vector<double>(c, 0.0)};
  for (std::size_t k = 0; k < c; ++k) {
    check(count[k] > 0.0, ErrorCode::kInvalidArgument, "channel {} has no finite values", k);
    s.mean[k] = sum[k] / count[k];
  }
  for (std::size_t i = 0; i < raw.size(); ++i)
    if (!std::isnan(raw[i])) {
      const double d = raw[i] - s.mean[i % c];
      s.std[i % c] += d * d;
    }
  for (std::size_t k = 0; k < c; ++k) s.std[k] = std::sqrt(s.std[k] / count[k]);
  return s;
}

Tensor standardize_values(const Tensor& raw, const ChannelStats& stats) {
  const std::size_t c = stats.mean.size();
  check(raw.rank() >= 1 && raw.shape().back() == c, ErrorCode::kShapeMismatch, "{} values for {} channels",
        shape_string(raw.shape()), c);
  for (std::size_t k = 0; k < c; ++k)
    check(stats.std[k] > 0.0 && std::isfinite(stats.std[k]), ErrorCode::kInvalidArgument,
          "degenerate channel {} (std {})", k, stats.std[k]);
  Tensor out(raw.shape());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const double v = (raw[i] - stats.mean[i % c]) / stats.std[i % c];
    out[i] = std::isnan(v) ? 0.0 : v;
  }
  return out;
}

Tensor destandardize(const ChannelStats& stats, const Tensor& values) {
  const std::size_t c = stats.mean.size();
  check(values.rank() >= 1 && values.shape().back() == c, ErrorCode::kShapeMismatch, "{} values for {} channels",
        shape_string(values.shape()), c);
  Tensor out(values.shape());
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = values[i] * stats.std[i % c] + stats.mean[i % c];
  return out;
}

TrajectoryDataset standardize(const Tensor& raw, const SystemSpec& spec, const std::string& split,
                              const std::optional<ChannelStats>& stats) {
  check(raw.rank() == 5, ErrorCode::kShapeMismatch, "trajectories must be [N, L, H, W, C], got {}",
        shape_string(raw.shape()));
  check(Shape(raw.shape().begin() + 2, raw.shape().end()) == spec.state_shape(), ErrorCode::kShapeMismatch,
        "trajectory states {} do not match system {}", shape_string(raw.shape()), shape_string(spec.state_shape()));
  check(split == "train" || split == "val" || split == "test", ErrorCode::kInvalidArgument, "unknown split '{}'",
        split);
  TrajectoryDataset d;
  d.stats = stats ? *stats : channel_stats(raw);
  d.trajectories = standardize_values(raw, d.stats);
  d.spec = spec;
  d.split = split;
  return d;
}

void save_dataset(const TrajectoryDataset& dataset, const std::filesystem::path& path,
                  const nlohmann::json& provenance) {
  Container c;
  c.kind = "dataset";
  c.meta = {{"spec", dataset.spec.to_json()},
            {"stats", dataset.stats.to_json()},
            {"split", dataset.split},
            {"shape", dataset.trajectories.shape()}};
  if (!provenance.is_null()) c.meta["provenance"] = provenance;
  c.add("trajectories", dataset.trajectories);
  write_container(path, c);
}

TrajectoryDataset load_dataset(const std::filesystem::path& path) {
  const Container c = read_container(path, "dataset");
  TrajectoryDataset d;
  try {
    d.spec = SystemSpec::from_json(c.meta.at("spec"));
    d.stats = ChannelStats::from_json(c.meta.at("stats"));
    d.split = c.meta.at("split").get<std::string>();
    const Shape declared = c.meta.at("shape").get<Shape>();
    d.trajectories = c.tensor("trajectories");
    check(declared == d.trajectories.shape(), ErrorCode::kHeaderMismatch,
          "dataset header declares shape {} but payload is {}", shape_string(declared),
          shape_string(d.trajectories.shape()));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kHeaderParse, "malformed dataset header: {}", e.what());
  }
  const Shape& s = d.trajectories.shape();
  check(s.size() == 5, ErrorCode::kHeaderMismatch, "dataset must be rank 5, got {}", shape_string(s));
  check(s[0] >= 1 && s[1] >= 1, ErrorCode::kHeaderMismatch, "dataset holds no states (shape {})", shape_string(s));
  check(Shape(s.begin() + 2, s.end()) == d.spec.state_shape(), ErrorCode::kHeaderMismatch,
        "dataset states {} disagree with its system {}", shape_string(s), shape_string(d.spec.state_shape()));
  check(d.stats.mean.size() == d.spec.channels, ErrorCode::kHeaderMismatch, "stats for {} channels, system has {}",
        d.stats.mean.size(), d.spec.channels);
  return d;
}

}  // namespace appa::systems
