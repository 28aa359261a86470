// Copyright 2026 The Appa Toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "autoencoder/autoencoder.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "core/error.hpp"
#include "core/rng.hpp"

namespace appa::ae {
namespace {

constexpr std::size_t kEvalChunk = 256;

void add_layer(ParamSet& p, const std::string& name, const Shape& w, std::mt19937_64& rng) {
  p.add(name + ".w", glorot(w, rng));
  p.add(name + ".b", Tensor({w.back()}));
}

ad::Var conv(ad::Var x, const BoundParams& p, const std::string& name) {
  return ad::conv2d(x, p[name + ".w"], p[name + ".b"], 1, ad::Padding::kPeriodic, ad::Padding::kPeriodic);
}

ad::Var dense(ad::Var x, const BoundParams& p, const std::string& name) {
  return ad::affine(x, p[name + ".w"], p[name + ".b"]);
}

std::vector<double> json_doubles(const nlohmann::json& j, const char* key) {
  return j.contains(key) ? j.at(key).get<std::vector<double>>() : std::vector<double>{};
}

}  // namespace

Mode parse_mode(const std::string& name) {
  if (name == "identity") return Mode::kIdentity;
  if (name == "mlp") return Mode::kMlp;
  if (name == "conv") return Mode::kConv;
  fail(ErrorCode::kConfig, "unknown autoencoder mode '{}'", name);
}

const char* to_string(Mode mode) {
  switch (mode) {
    case Mode::kIdentity:
      return "identity";
    case Mode::kMlp:
      return "mlp";
    case Mode::kConv:
      return "conv";
  }
  return "?";
}

nlohmann::json AutoencoderConfig::to_json() const {
  return {{"mode", to_string(mode)},   {"sigma_z", sigma_z},
          {"factor", factor},          {"latent_channels", latent_channels},
          {"latent_dim", latent_dim},  {"hidden", hidden},
          {"channel_weights", channel_weights}, {"row_weights", row_weights},
          {"lr", lr},                  {"steps", steps},
          {"batch", batch},            {"micro_batch", micro_batch}};
}

AutoencoderConfig AutoencoderConfig::from_json(const nlohmann::json& j) {
  AutoencoderConfig c;
  c.mode = parse_mode(j.value("mode", std::string("identity")));
  c.sigma_z = j.value("sigma_z", c.sigma_z);
  c.factor = j.value("factor", c.factor);
  c.latent_channels = j.value("latent_channels", c.latent_channels);
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.hidden = j.value("hidden", c.hidden);
  c.channel_weights = json_doubles(j, "channel_weights");
  c.row_weights = json_doubles(j, "row_weights");
  c.lr = j.value("lr", c.lr);
  c.steps = j.value("steps", c.steps);
  c.batch = j.value("batch", c.batch);
  c.micro_batch = j.value("micro_batch", c.micro_batch);
  check(c.sigma_z >= 0.0 && std::isfinite(c.sigma_z), ErrorCode::kConfig, "sigma_z must be >= 0");
  check(c.batch >= 1 && c.micro_batch >= 1, ErrorCode::kConfig, "batch sizes must be >= 1");
  check(c.lr > 0.0, ErrorCode::kConfig, "learning rate must be positive");
  return c;
}

Tensor weight_field(const Shape& state_shape, const std::vector<double>& channel_weights,
                    const std::vector<double>& row_weights) {
  check(state_shape.size() == 3, ErrorCode::kShapeMismatch, "state shape must be [H, W, C]");
  const std::size_t h = state_shape[0], w = state_shape[1], c = state_shape[2];
  check(channel_weights.empty() || channel_weights.size() == c, ErrorCode::kShapeMismatch,
        "{} channel weights for {} channels", channel_weights.size(), c);
  check(row_weights.empty() || row_weights.size() == h, ErrorCode::kShapeMismatch, "{} row weights for {} rows",
        row_weights.size(), h);
  for (double v : channel_weights)
    check(v > 0.0 && std::isfinite(v), ErrorCode::kInvalidArgument, "loss weights must be positive, got {}", v);
  for (double v : row_weights)
    check(v > 0.0 && std::isfinite(v), ErrorCode::kInvalidArgument, "loss weights must be positive, got {}", v);
  Tensor out(state_shape);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t k = 0; k < c; ++k)
        out[(r * w + x) * c + k] = (row_weights.empty() ? 1.0 : row_weights[r]) *
                                   (channel_weights.empty() ? 1.0 : channel_weights[k]);
  return out;
}

ad::Var weighted_mse(ad::Var x_hat, ad::Var x, const Tensor& weights) {
  check(x_hat.shape() == x.shape(), ErrorCode::kShapeMismatch, "weighted_mse: {} vs {}",
        shape_string(x_hat.shape()), shape_string(x.shape()));
  const std::size_t per = weights.size();
  check(per > 0 && x.value().size() % per == 0, ErrorCode::kShapeMismatch, "weights {} do not tile {}",
        shape_string(weights.shape()), shape_string(x.shape()));
  const std::size_t n = x.value().size() / per;
  Tensor tiled(x.shape());
  double total = 0.0;
  for (double w : weights.data()) {
    check(w > 0.0 && std::isfinite(w), ErrorCode::kInvalidArgument, "loss weights must be positive, got {}", w);
    total += w;
  }
  for (std::size_t i = 0; i < tiled.size(); ++i) tiled[i] = weights[i % per];
  ad::Var d = ad::sub(x_hat, x);
  return ad::scale(ad::sum(ad::mul_const(ad::mul(d, d), tiled)), 1.0 / (static_cast<double>(n) * total));
}

double weighted_mse(const Tensor& x_hat, const Tensor& x, const Tensor& weights) {
  require_same_shape(x_hat, x, "weighted_mse");
  const std::size_t per = weights.size();
  check(per > 0 && x.size() % per == 0, ErrorCode::kShapeMismatch, "weights {} do not tile {}",
        shape_string(weights.shape()), shape_string(x.shape()));
  double total = 0.0;
  for (double w : weights.data()) {
    check(w > 0.0 && std::isfinite(w), ErrorCode::kInvalidArgument, "loss weights must be positive, got {}", w);
    total += w;
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x_hat[i] - x[i];
    acc += weights[i % per] * (d * d);
  }
  return acc / (static_cast<double>(x.size() / per) * total);
}

Autoencoder::Autoencoder(const AutoencoderConfig& config, const Shape& state_shape, std::uint64_t seed)
    : config_(config), state_shape_(state_shape) {
  check(state_shape.size() == 3 && numel(state_shape) > 0, ErrorCode::kShapeMismatch,
        "state shape must be [H, W, C], got {}", shape_string(state_shape));
  weights_ = ae::weight_field(state_shape, config.channel_weights, config.row_weights);
  auto rng = make_rng(seed, 0x61650000);
  const std::size_t h = state_shape[0], w = state_shape[1], c = state_shape[2];
  const std::size_t hid = config.hidden;
  switch (config.mode) {
    case Mode::kIdentity:
      break;
    case Mode::kMlp: {
      const std::size_t s = numel(state_shape), d = config.latent_dim;
      check(d >= 1 && hid >= 1, ErrorCode::kConfig, "mlp autoencoder needs latent_dim and hidden >= 1");
      add_layer(params_, "enc.l1", {s, hid}, rng);
      add_layer(params_, "enc.l2", {hid, hid}, rng);
      add_layer(params_, "enc.l3", {hid, d}, rng);
      add_layer(params_, "enc.skip", {s, d}, rng);
      add_layer(params_, "dec.l1", {d, hid}, rng);
      add_layer(params_, "dec.l2", {hid, hid}, rng);
      add_layer(params_, "dec.l3", {hid, s}, rng);
      add_layer(params_, "dec.skip", {d, s}, rng);
      break;
    }
    case Mode::kConv: {
      const std::size_t f = config.factor, cl = config.latent_channels;
      check(f >= 1 && h % f == 0 && w % f == 0, ErrorCode::kConfig, "grid {}x{} is not divisible by factor {}", h, w,
            f);
      check(cl >= 1 && hid >= 1, ErrorCode::kConfig, "conv autoencoder needs latent_channels and hidden >= 1");
      const std::size_t d = f * f * c;
      add_layer(params_, "enc.c1", {3, 3, d, hid}, rng);
      add_layer(params_, "enc.c2", {3, 3, hid, hid}, rng);
      add_layer(params_, "enc.c3", {1, 1, hid, cl}, rng);
      add_layer(params_, "enc.skip", {1, 1, d, cl}, rng);
      add_layer(params_, "dec.c1", {3, 3, cl, hid}, rng);
      add_layer(params_, "dec.c2", {3, 3, hid, hid}, rng);
      add_layer(params_, "dec.c3", {1, 1, hid, d}, rng);
      add_layer(params_, "dec.skip", {1, 1, cl, d}, rng);
      break;
    }
  }
}

Shape Autoencoder::latent_shape() const {
  switch (config_.mode) {
    case Mode::kIdentity:
      return state_shape_;
    case Mode::kMlp:
      return {config_.latent_dim};
    case Mode::kConv:
      return {state_shape_[0] / config_.factor, state_shape_[1] / config_.factor, config_.latent_channels};
  }
  return {};
}

ad::Var Autoencoder::encode(ad::Var x, const BoundParams& p) const {
  const Shape xs = x.shape();
  check(xs.size() == 4 && Shape(xs.begin() + 1, xs.end()) == state_shape_, ErrorCode::kShapeMismatch,
        "encoder expects [n, {}], got {}", shape_string(state_shape_).substr(1), shape_string(xs));
  const std::size_t n = xs[0];
  switch (config_.mode) {
    case Mode::kIdentity:
      return ad::reshape(x, {n, state_dim()});
    case Mode::kMlp: {
      ad::Var flat = ad::reshape(x, {n, state_dim()});
      ad::Var hdn = ad::gelu(dense(flat, p, "enc.l1"));
      hdn = ad::gelu(dense(hdn, p, "enc.l2"));
      return ad::add(dense(hdn, p, "enc.l3"), dense(flat, p, "enc.skip"));
    }
    case Mode::kConv: {
      const std::size_t f = config_.factor, h = xs[1], w = xs[2], c = xs[3];
      auto idx = std::make_shared<const std::vector<std::size_t>>(ad::space_to_depth_indices(n, h, w, c, f));
      ad::Var s = ad::gather(x, idx, {n, h / f, w / f, f * f * c});
      ad::Var hdn = ad::gelu(conv(s, p, "enc.c1"));
      hdn = ad::gelu(conv(hdn, p, "enc.c2"));
      ad::Var z = ad::add(conv(hdn, p, "enc.c3"), conv(s, p, "enc.skip"));
      return ad::reshape(z, {n, latent_dim()});
    }
  }
  return x;
}

ad::Var Autoencoder::decode(ad::Var z, const BoundParams& p) const {
  const Shape zs = z.shape();
  check(zs.size() == 2 && zs[1] == latent_dim(), ErrorCode::kShapeMismatch, "decoder expects [n, {}], got {}",
        latent_dim(), shape_string(zs));
  const std::size_t n = zs[0];
  Shape out{n};
  out.insert(out.end(), state_shape_.begin(), state_shape_.end());
  switch (config_.mode) {
    case Mode::kIdentity:
      return ad::reshape(z, out);
    case Mode::kMlp: {
      ad::Var hdn = ad::gelu(dense(z, p, "dec.l1"));
      hdn = ad::gelu(dense(hdn, p, "dec.l2"));
      return ad::reshape(ad::add(dense(hdn, p, "dec.l3"), dense(z, p, "dec.skip")), out);
    }
    case Mode::kConv: {
      const std::size_t f = config_.factor, h = state_shape_[0], w = state_shape_[1], c = state_shape_[2];
      const Shape ls = latent_shape();
      ad::Var g = ad::reshape(z, {n, ls[0], ls[1], ls[2]});
      ad::Var hdn = ad::gelu(conv(g, p, "dec.c1"));
      hdn = ad::gelu(conv(hdn, p, "dec.c2"));
      ad::Var s = ad::add(conv(hdn, p, "dec.c3"), conv(g, p, "dec.skip"));
      auto idx = std::make_shared<const std::vector<std::size_t>>(ad::depth_to_space_indices(n, h, w, c, f));
      return ad::gather(s, idx, out);
    }
  }
  return z;
}

ad::Var Autoencoder::decode(ad::Var z) const {
  const BoundParams p(z.graph(), params_, false);
  return decode(z, p);
}

Tensor Autoencoder::batch_call(const Tensor& input, std::size_t in_size, std::size_t out_size, bool encoder) const {
  check(input.size() % in_size == 0 && input.rank() >= 1, ErrorCode::kShapeMismatch, "{} is not a batch of {}",
        shape_string(input.shape()), in_size);
  const Shape& in_shape = encoder ? state_shape_ : latent_shape();
  const std::size_t tail = encoder ? 3 : (config_.mode == Mode::kMlp ? 1 : 3);
  const Shape& s = input.shape();
  // Accept either the structured trailing shape or a flat trailing axis.
  std::size_t lead_rank;
  if (s.size() >= tail && Shape(s.end() - static_cast<long>(tail), s.end()) == in_shape)
    lead_rank = s.size() - tail;
  else if (!encoder && s.back() == in_size)
    lead_rank = s.size() - 1;
  else
    fail(ErrorCode::kShapeMismatch, "{} input {} does not end with {}", encoder ? "encoder" : "decoder",
         shape_string(s), shape_string(in_shape));
  const std::size_t n = input.size() / in_size;
  Shape out_shape(s.begin(), s.begin() + static_cast<long>(lead_rank));
  if (encoder)
    out_shape.push_back(out_size);
  else
    out_shape.insert(out_shape.end(), state_shape_.begin(), state_shape_.end());
  Tensor out(out_shape);
  for (std::size_t b = 0; b < n; b += kEvalChunk) {
    const std::size_t e = std::min(n, b + kEvalChunk);
    ad::Graph g;
    const BoundParams p(g, params_, false);
    Tensor chunk(encoder ? Shape{e - b, state_shape_[0], state_shape_[1], state_shape_[2]} : Shape{e - b, in_size});
    std::copy(input.data().begin() + static_cast<long>(b * in_size),
              input.data().begin() + static_cast<long>(e * in_size), chunk.data().begin());
    ad::Var x = g.constant(std::move(chunk));
    const Tensor y = encoder ? encode(x, p).value() : decode(x, p).value();
    std::copy(y.data().begin(), y.data().end(), out.data().begin() + static_cast<long>(b * out_size));
  }
  return out;
}

Tensor Autoencoder::encode_mean(const Tensor& x) const { return batch_call(x, state_dim(), latent_dim(), true); }

Tensor Autoencoder::encode(const Tensor& x, std::mt19937_64& rng) const {
  Tensor z = encode_mean(x);
  if (config_.sigma_z > 0.0) z += randn(z.shape(), rng) * config_.sigma_z;
  return z;
}

Tensor Autoencoder::decode(const Tensor& z) const { return batch_call(z, latent_dim(), state_dim(), false); }

nlohmann::json Autoencoder::meta() const { return {{"config", config_.to_json()}, {"state_shape", state_shape_}}; }

void Autoencoder::store(Container& out) const {
  out.meta["autoencoder"] = meta();
  params_.store(out, "ae/");
}

Autoencoder Autoencoder::load(const Container& in) {
  try {
    const auto& m = in.meta.at("autoencoder");
    Autoencoder model(AutoencoderConfig::from_json(m.at("config")), m.at("state_shape").get<Shape>(), 0);
    const ParamSet stored = ParamSet::load(in, "ae/");
    check(stored.names() == model.params_.names(), ErrorCode::kHeaderMismatch,
          "autoencoder parameters do not match its config");
    for (std::size_t i = 0; i < stored.size(); ++i)
      check(stored.values()[i].shape() == model.params_.values()[i].shape(), ErrorCode::kHeaderMismatch,
            "parameter '{}' has shape {}", stored.names()[i], shape_string(stored.values()[i].shape()));
    model.params_ = stored;
    return model;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kHeaderParse, "malformed autoencoder header: {}", e.what());
  }
}

double reconstruction_rmse(const Autoencoder& model, const Tensor& states) {
  const Tensor rec = model.decode(model.encode_mean(states));
  double acc = 0.0;
  for (std::size_t i = 0; i < states.size(); ++i) acc += (rec[i] - states[i]) * (rec[i] - states[i]);
  return std::sqrt(acc / static_cast<double>(states.size()));
}

TrainReport train_autoencoder(Autoencoder& model, const Tensor& train, const Tensor& val, std::uint64_t seed,
                              std::size_t threads, TrainState* state,
                              const std::function<void(const TrainState&)>& checkpoint) {
  const std::size_t sd = model.state_dim();
  check(train.size() > 0 && train.size() % sd == 0, ErrorCode::kShapeMismatch, "training data {} is not states of {}",
        shape_string(train.shape()), shape_string(model.state_shape()));
  TrainReport report;
  const auto& cfg = model.config();
  if (model.params().size() > 0) {
    TrainState local;
    TrainState& st = state ? *state : local;
    if (st.params.size() == 0) {
      st.params = model.params();
      st.adam = AdamState::for_params(st.params.values(), cfg.lr);
    }
    const std::size_t count = train.size() / sd;
    const Shape& ss = model.state_shape();
    const std::size_t chunks = (cfg.batch + cfg.micro_batch - 1) / cfg.micro_batch;
    run_adam(
        st, cfg.steps,
        [&](std::uint64_t step, std::vector<Tensor>& grads) {
          auto rng = make_rng(seed, step);
          std::uniform_int_distribution<std::size_t> pick(0, count - 1);
          std::vector<Tensor> xs(chunks), noise(chunks);
          for (std::size_t c = 0; c < chunks; ++c) {
            const std::size_t m = std::min(cfg.micro_batch, cfg.batch - c * cfg.micro_batch);
            xs[c] = Tensor({m, ss[0], ss[1], ss[2]});
            for (std::size_t i = 0; i < m; ++i) {
              const std::size_t k = pick(rng);
              std::copy(train.data().begin() + static_cast<long>(k * sd),
                        train.data().begin() + static_cast<long>((k + 1) * sd),
                        xs[c].data().begin() + static_cast<long>(i * sd));
            }
            noise[c] = randn({m, model.latent_dim()}, rng) * cfg.sigma_z;
          }
          return accumulate_gradients(chunks, threads, st.params, [&](std::size_t c, std::vector<Tensor>& g) {
            ad::Graph graph;
            const BoundParams p(graph, st.params, true);
            ad::Var x = graph.constant(xs[c]);
            // Latent noise is injected at the encoder output, before decoding.
            ad::Var z = ad::add_const(model.encode(x, p), noise[c]);
            ad::Var loss = weighted_mse(model.decode(z, p), x, model.weight_field());
            graph.backward(loss);
            for (std::size_t k = 0; k < g.size(); ++k) g[k] = graph.grad(p.vars()[k]);
            return loss.value().item();
          }, grads);
        },
        [&](const TrainState& s) {
          model.params() = s.params;
          if (checkpoint) checkpoint(s);
        });
    model.params() = st.params;
    report.losses = st.losses;
  }
  report.val_rmse = reconstruction_rmse(model, val.size() > 0 ? val : train);
  return report;
}

void save_autoencoder(const Autoencoder& model, const std::filesystem::path& path,
                      const nlohmann::json& provenance) {
  Container c;
  c.kind = "autoencoder";
  model.store(c);
  if (!provenance.is_null()) c.meta["provenance"] = provenance;
  write_container(path, c);
}

Autoencoder load_autoencoder(const std::filesystem::path& path) {
  return Autoencoder::load(read_container(path, "autoencoder"));
}

}  // namespace appa::ae
