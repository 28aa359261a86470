// Copyright 2026 The Appa Toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "assimilation/assimilation.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include <fmt/core.h>

#include "core/error.hpp"
#include "core/parallel.hpp"
#include "core/rng.hpp"

namespace appa::assim {
namespace {


Shape with_leading(std::size_t a, std::size_t b, const Shape& rest) {
  Shape s{a, b};
  s.insert(s.end(), rest.begin(), rest.end());
  return s;
}

}  // namespace

VarianceMode parse_variance_mode(const std::string& name) {
  if (name == "exact") return VarianceMode::kExact;
  if (name == "diagonal") return VarianceMode::kDiagonal;
  if (name == "scalar") return VarianceMode::kScalar;
  fail(ErrorCode::kConfig, "unknown variance mode '{}' (exact, diagonal, scalar)", name);
}

const char* to_string(VarianceMode mode) {
  switch (mode) {
    case VarianceMode::kExact: return "exact";
    case VarianceMode::kDiagonal: return "diagonal";
    case VarianceMode::kScalar: return "scalar";
  }
  return "scalar";
}

nlohmann::json GuidanceConfig::to_json() const {
  return {{"enabled", enabled},
          {"cg_iters", cg_iters},
          {"cg_tol", cg_tol},
          {"guidance_scale", guidance_scale},
          {"variance", to_string(variance)},
          {"prior_var", prior_var}};
}

GuidanceConfig GuidanceConfig::from_json(const nlohmann::json& j) {
  GuidanceConfig c;
  c.enabled = j.value("enabled", c.enabled);
  c.cg_iters = j.value("cg_iters", c.cg_iters);
  c.cg_tol = j.value("cg_tol", c.cg_tol);
  c.guidance_scale = j.value("guidance_scale", c.guidance_scale);
  c.variance = parse_variance_mode(j.value("variance", std::string("scalar")));
  c.prior_var = j.value("prior_var", c.prior_var);
  check(c.cg_iters >= 1, ErrorCode::kConfig, "cg_iters must be >= 1");
  check(c.cg_tol > 0.0, ErrorCode::kConfig, "cg_tol must be > 0");
  check(c.guidance_scale > 0.0, ErrorCode::kConfig, "guidance_scale must be > 0, got {}", c.guidance_scale);
  for (double v : c.prior_var) check(v > 0.0, ErrorCode::kConfig, "prior_var entries must be > 0");
  return c;
}

CgResult conjugate_gradient(const std::function<Tensor(const Tensor&)>& apply, const Tensor& b,
                            std::size_t max_iters, double tol) {
  CgResult best{Tensor(b.shape()), 0, 1.0, false};
  const double b_norm = std::sqrt(dot(b, b));
  if (b_norm == 0.0) {
    best.residual = 0.0;
    best.converged = true;
    return best;
  }
  Tensor x(b.shape()), r = b, p = b;
  double rr = dot(r, r);
  for (std::size_t k = 1; k <= max_iters; ++k) {
    const Tensor ap = apply(p);
    const double pap = dot(p, ap);
    if (!(pap > 0.0)) break;
    const double alpha = rr / pap;
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] += alpha * p[i];
      r[i] -= alpha * ap[i];
    }
    const double rr_next = dot(r, r);
    const double rel = std::sqrt(rr_next) / b_norm;
    if (rel < best.residual) best = {x, k, rel, false};
    if (rel <= tol) {
      best.converged = true;
      return best;
    }
    const double beta = rr_next / rr;
    rr = rr_next;
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = r[i] + beta * p[i];
  }
  return best;
}

LikelihoodScore likelihood_score(const diffusion::Denoiser& prior, const obs::LatentObservationOperator& op,
                                 const Tensor& z, double sigma, std::int64_t t0, const GuidanceConfig& cfg) {
  check(sigma > 0.0, ErrorCode::kInvalidArgument, "likelihood score needs sigma > 0");
  check(z.shape() == Shape{op.length(), op.latent_dim()}, ErrorCode::kShapeMismatch,
        "latent trajectory {} does not match the observation operator [{}, {}]", shape_string(z.shape()),
        op.length(), op.latent_dim());
  const double s2 = sigma * sigma;
  ad::Graph gd;
  const ad::Var x = gd.input(z);
  const ad::Var d = prior.denoise(gd, x, sigma, t0);
  LikelihoodScore out;
  out.denoised = d.value();

  ad::Graph ga;
  const ad::Var dn = ga.input(out.denoised);
  const ad::Var a = op.apply(ga, dn);
  Tensor r = op.y() - a.value();
  check(r.all_finite(), ErrorCode::kNumerical, "non-finite observation residual at sigma {}", sigma);

  auto adjoint = [&](const Tensor& w) {
    ga.backward(a, w);
    return ga.grad(dn);
  };
  auto forward = [&](const Tensor& v) {
    const std::vector<ad::Var> in{dn};
    const std::vector<Tensor> tan{v};
    return ga.jvp(in, tan, a);
  };
  const std::size_t dim = op.latent_dim();
  std::vector<double> diag;
  if (cfg.variance == VarianceMode::kDiagonal) {
    check(cfg.prior_var.empty() || cfg.prior_var.size() == dim, ErrorCode::kConfig,
          "prior_var has {} entries for a latent of {}", cfg.prior_var.size(), dim);
    for (std::size_t k = 0; k < dim; ++k) {
      const double v = cfg.prior_var.empty() ? 1.0 : cfg.prior_var[k];
      diag.push_back(s2 * v / (s2 + v));
    }
  }
  auto covariance = [&](const Tensor& v) -> Tensor {
    switch (cfg.variance) {
      case VarianceMode::kScalar: return v * s2;
      case VarianceMode::kDiagonal: {
        Tensor out_v = v;
        for (std::size_t i = 0; i < v.size(); ++i) out_v[i] *= diag[i % dim];
        return out_v;
      }
      case VarianceMode::kExact: {
        const std::vector<ad::Var> in{x};
        const std::vector<Tensor> tan{v};
        return gd.jvp(in, tan, d) * s2;
      }
    }
    return v;
  };
  const Tensor& noise = op.noise_var();
  auto system = [&](const Tensor& w) {
    Tensor out_w = forward(covariance(adjoint(w)));
    for (std::size_t i = 0; i < w.size(); ++i) out_w[i] += noise[i] * w[i];
    return out_w;
  };
  out.cg = conjugate_gradient(system, r, cfg.cg_iters, cfg.cg_tol);
  gd.backward(d, adjoint(out.cg.x));
  out.score = gd.grad(x) * cfg.guidance_scale;
  check(out.score.all_finite(), ErrorCode::kNumerical, "non-finite likelihood score at sigma {}", sigma);
  return out;
}

Tensor posterior_sample(const diffusion::Denoiser& prior, const obs::LatentObservationOperator& op,
                        const diffusion::Schedule& schedule, const diffusion::SamplerConfig& sampler,
                        const GuidanceConfig& guidance, std::uint64_t seed, std::int64_t t0, SampleStats* stats) {
  const std::size_t rows = op.length();
  check(op.latent_dim() == prior.step_dim(), ErrorCode::kShapeMismatch,
        "observation operator latent size {} differs from the prior's {}", op.latent_dim(), prior.step_dim());
  if (!guidance.enabled || op.count() == 0) return diffusion::sample_prior(prior, schedule, rows, sampler, seed, t0);
  check(prior.window() == 0 || prior.window() == rows, ErrorCode::kShapeMismatch,
        "prior handles {} rows, observations cover {}", prior.window(), rows);
  SampleStats local;
  auto rng = make_rng(seed);
  const Tensor out = diffusion::sample(
      [&](const Tensor& z, double sigma, std::size_t) {
        LikelihoodScore ls = likelihood_score(prior, op, z, sigma, t0, guidance);
        ++local.steps;
        if (!ls.cg.converged) ++local.cg_failures;
        Tensor d = std::move(ls.denoised);
        const double s2 = sigma * sigma;
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += s2 * ls.score[i];
        return d;
      },
      schedule, {rows, prior.step_dim()}, sampler, rng);
  if (local.cg_failures > 0 && !stats)
    fmt::print(stderr, "warning: conjugate gradient missed tolerance {} in {} of {} steps; used best iterates\n",
               guidance.cg_tol, local.cg_failures, local.steps);
  if (stats) {
    stats->steps += local.steps;
    stats->cg_failures += local.cg_failures;
  }
  return out;
}

std::uint64_t member_seed(std::uint64_t seed, std::size_t member) {
  return splitmix(seed ^ splitmix(static_cast<std::uint64_t>(member) + 1));
}

// ---------------------------------------------------------------------------

TaskKind parse_task_kind(const std::string& name) {
  if (name == "reanalysis") return TaskKind::kReanalysis;
  if (name == "filtering") return TaskKind::kFiltering;
  if (name == "forecast-observational") return TaskKind::kForecastObservational;
  if (name == "forecast-fullstate") return TaskKind::kForecastFullState;
  fail(ErrorCode::kConfig, "unknown task '{}'", name);
}

const char* to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::kReanalysis: return "reanalysis";
    case TaskKind::kFiltering: return "filtering";
    case TaskKind::kForecastObservational: return "forecast-observational";
    case TaskKind::kForecastFullState: return "forecast-fullstate";
  }
  return "reanalysis";
}

nlohmann::json TaskSpec::to_json() const {
  return {{"kind", to_string(kind)}, {"length", length}, {"context", context}, {"members", members},
          {"slide", slide},          {"start", start}};
}

TaskSpec TaskSpec::from_json(const nlohmann::json& j) {
  TaskSpec t;
  t.kind = parse_task_kind(j.value("kind", std::string("reanalysis")));
  t.length = j.value("length", t.length);
  t.context = j.value("context", t.context);
  t.members = j.value("members", t.members);
  t.slide = j.value("slide", t.slide);
  t.start = j.value("start", t.start);
  check(t.members >= 1, ErrorCode::kConfig, "task needs at least one member");
  check(t.length >= 1, ErrorCode::kConfig, "task length must be >= 1");
  if (t.forecast())
    check(t.context >= 1 && t.context < t.length, ErrorCode::kConfig,
          "forecast conditioning length {} must be in [1, {})", t.context, t.length);
  return t;
}

namespace {

// Denoiser over `length` rows: the window itself, or its composition.
struct TrajectoryPrior {
  std::unique_ptr<composition::ComposedDenoiser> composed;
  const diffusion::Denoiser* denoiser = nullptr;
};

TrajectoryPrior trajectory_prior(const Model& model, std::size_t length) {
  TrajectoryPrior p;
  const std::size_t w = model.window.window();
  if (w == 0 || w == length) {
    p.denoiser = &model.window;
    return p;
  }
  p.composed = std::make_unique<composition::ComposedDenoiser>(
      model.window, composition::make_plan(w, std::min(model.stride, w), length));
  p.denoiser = p.composed.get();
  return p;
}

EnsembleResult finish(const Model& model, std::vector<Tensor> latents, std::vector<std::uint64_t> seeds,
                      const std::vector<SampleStats>& stats) {
  EnsembleResult out;
  std::vector<Tensor> states;
  for (const Tensor& z : latents) {
    const Tensor x = model.autoencoder.decode(z);
    check(x.all_finite(), ErrorCode::kNumerical, "non-finite decoded state");
    states.push_back(x);
  }
  out.latents = stack(latents);
  out.states = stack(states);
  out.seeds = std::move(seeds);
  for (const auto& s : stats) {
    out.cg_failures += s.cg_failures;
    out.guided_steps += s.steps;
  }
  if (out.cg_failures > 0)
    fmt::print(stderr, "warning: conjugate gradient missed tolerance {} in {} of {} guided steps; used best iterates\n",
               model.guidance.cg_tol, out.cg_failures, out.guided_steps);
  return out;
}

obs::LatentObservationOperator latent_operator(const Model& model, const obs::ObservationSet& y) {
  check(y.state_shape == model.autoencoder.state_shape(), ErrorCode::kShapeMismatch,
        "observations of {} states for an autoencoder of {}", shape_string(y.state_shape),
        shape_string(model.autoencoder.state_shape()));
  return obs::LatentObservationOperator(obs::decoder_of(model.autoencoder), model.autoencoder.latent_dim(), y);
}

}  // namespace

EnsembleResult reanalysis(const Model& model, const obs::ObservationSet& y, std::size_t members, std::uint64_t seed,
                          std::int64_t t0) {
  check(members >= 1, ErrorCode::kInvalidArgument, "ensemble needs at least one member");
  const TrajectoryPrior prior = trajectory_prior(model, y.length());
  const obs::LatentObservationOperator op = latent_operator(model, y);
  std::vector<Tensor> latents(members);
  std::vector<std::uint64_t> seeds(members);
  std::vector<SampleStats> stats(members);
  parallel_for(members, model.threads, [&](std::size_t m) {
    seeds[m] = member_seed(seed, m);
    latents[m] = posterior_sample(*prior.denoiser, op, model.schedule, model.sampler, model.guidance, seeds[m], t0,
                                  &stats[m]);
  });
  return finish(model, std::move(latents), std::move(seeds), stats);
}

EnsembleResult filtering(const Model& model, const obs::ObservationSet& y, std::size_t members, std::uint64_t seed,
                         std::int64_t t0) {
  EnsembleResult full = reanalysis(model, y, members, seed, t0);
  const std::size_t len = full.latents.dim(1), d = full.latents.dim(2);
  const std::size_t v = full.states.size() / (members * len);
  Shape state_shape(full.states.shape().begin() + 2, full.states.shape().end());
  EnsembleResult out;
  out.latents = Tensor({members, 1, d});
  out.states = Tensor(with_leading(members, 1, state_shape));
  for (std::size_t m = 0; m < members; ++m) {
    std::copy_n(full.latents.data().begin() + static_cast<long>((m * len + len - 1) * d), d,
                out.latents.data().begin() + static_cast<long>(m * d));
    std::copy_n(full.states.data().begin() + static_cast<long>((m * len + len - 1) * v), v,
                out.states.data().begin() + static_cast<long>(m * v));
  }
  out.seeds = std::move(full.seeds);
  out.cg_failures = full.cg_failures;
  out.guided_steps = full.guided_steps;
  return out;
}

EnsembleResult prior_ensemble(const Model& model, std::size_t length, std::size_t members, std::uint64_t seed,
                              std::int64_t t0) {
  obs::ObservationSet empty;
  empty.state_shape = model.autoencoder.state_shape();
  empty.steps.resize(length);
  return reanalysis(model, empty, members, seed, t0);
}

EnsembleResult forecast_from_latents(const Model& model, const Tensor& context, std::size_t lead,
                                     std::size_t slide, std::size_t members, std::uint64_t seed, std::int64_t t0) {
  check(members >= 1, ErrorCode::kInvalidArgument, "ensemble needs at least one member");
  const std::size_t w = model.window.window(), d = model.window.step_dim();
  check(w >= 2, ErrorCode::kConfig, "forecasting needs a fixed-window denoiser");
  if (slide == 0) slide = w / 2;
  check(slide >= 1 && slide < w, ErrorCode::kConfig, "forecast slide must be in [1, {}), got {}", w, slide);
  check(context.rank() == 3 && context.dim(2) == d && (context.dim(0) == 1 || context.dim(0) == members),
        ErrorCode::kShapeMismatch, "forecast context {} for {} members of latent size {}",
        shape_string(context.shape()), members, d);
  const std::size_t c0 = context.dim(1);
  check(c0 >= 1 && c0 + slide <= w, ErrorCode::kConfig,
        "conditioning length {} plus slide {} exceeds the window {}", c0, slide, w);
  const Shape state_shape = model.autoencoder.state_shape();
  if (lead == 0) {
    EnsembleResult out;
    out.latents = Tensor({members, 0, d});
    out.states = Tensor(with_leading(members, 0, state_shape));
    for (std::size_t m = 0; m < members; ++m) out.seeds.push_back(member_seed(seed, m));
    return out;
  }
  std::vector<Tensor> latents(members);
  std::vector<std::uint64_t> seeds(members);
  std::vector<SampleStats> stats(members);
  parallel_for(members, model.threads, [&](std::size_t m) {
    seeds[m] = member_seed(seed, m);
    const std::size_t src = context.dim(0) == 1 ? 0 : m;
    std::vector<double> hist(context.data().begin() + static_cast<long>(src * c0 * d),
                             context.data().begin() + static_cast<long>((src + 1) * c0 * d));
    std::size_t generated = 0;
    for (std::size_t round = 0; generated < lead; ++round) {
      const std::size_t rows_have = hist.size() / d;
      const std::size_t c = std::min(rows_have, w - slide);
      std::vector<std::size_t> pinned(c);
      for (std::size_t i = 0; i < c; ++i) pinned[i] = i;
      const Tensor tail({c, d}, std::vector<double>(hist.end() - static_cast<long>(c * d), hist.end()));
      const auto op = obs::LatentObservationOperator::pins(w, d, pinned, tail);
      const std::int64_t window_t0 = t0 + static_cast<std::int64_t>(rows_have - c);
      const Tensor z = posterior_sample(model.window, op, model.schedule, model.sampler, model.guidance,
                                        member_seed(seeds[m], round), window_t0, &stats[m]);
      const std::size_t take = std::min(w - c, lead - generated);
      hist.insert(hist.end(), z.data().begin() + static_cast<long>(c * d),
                  z.data().begin() + static_cast<long>((c + take) * d));
      generated += take;
    }
    latents[m] = Tensor({lead, d}, std::vector<double>(hist.end() - static_cast<long>(lead * d), hist.end()));
  });
  return finish(model, std::move(latents), std::move(seeds), stats);
}

EnsembleResult forecast_fullstate(const Model& model, const Tensor& states, std::size_t lead, std::size_t slide,
                                  std::size_t members, std::uint64_t seed, std::int64_t t0) {
  check(states.rank() == 4, ErrorCode::kShapeMismatch, "conditioning states must be [K, H, W, C], got {}",
        shape_string(states.shape()));
  const Tensor z = model.autoencoder.encode_mean(states);
  return forecast_from_latents(model, z.reshaped({1, states.dim(0), model.autoencoder.latent_dim()}), lead, slide,
                               members, seed, t0);
}

EnsembleResult forecast_observational(const Model& model, const obs::ObservationSet& y, std::size_t lead,
                                      std::size_t slide, std::size_t members, std::uint64_t seed, std::int64_t t0) {
  const std::size_t w = model.window.window();
  if (slide == 0) slide = w / 2;
  check(slide >= 1 && slide < w, ErrorCode::kConfig, "forecast slide must be in [1, {}), got {}", w, slide);
  const EnsembleResult assimilated = reanalysis(model, y, members, seed, t0);
  const std::size_t len = y.length(), d = model.autoencoder.latent_dim();
  const std::size_t c = std::min(len, w - slide);
  Tensor context({members, c, d});
  for (std::size_t m = 0; m < members; ++m)
    std::copy_n(assimilated.latents.data().begin() + static_cast<long>((m * len + len - c) * d), c * d,
                context.data().begin() + static_cast<long>(m * c * d));
  return forecast_from_latents(model, context, lead, slide, members, splitmix(seed ^ 0x666f7265),
                               t0 + static_cast<std::int64_t>(len - c));
}

Tensor persistence(const Tensor& state, std::size_t lead) {
  Shape shape = state.shape();
  shape.insert(shape.begin(), lead);
  Tensor out(shape);
  for (std::size_t t = 0; t < lead; ++t)
    std::copy(state.data().begin(), state.data().end(), out.data().begin() + static_cast<long>(t * state.size()));
  return out;
}

}  // namespace appa::assim
