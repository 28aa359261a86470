// Copyright 2026 The Appa Toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "pipeline/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <fmt/format.h>

#include "core/container.hpp"
#include "core/error.hpp"
#include "core/rng.hpp"
#include "evaluation/metrics.hpp"
#include "evaluation/physics.hpp"
#include "evaluation/spectrum.hpp"

namespace appa::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  check(j.is_object(), ErrorCode::kConfig, "'{}' must be a JSON object", where);
  for (const auto& [key, value] : j.items()) {
    (void)value;
    check(allowed.count(key) > 0, ErrorCode::kConfig, "unknown key '{}' in {}", key,
          where.empty() ? std::string("config") : "'" + where + "'");
  }
}

std::set<std::string> keys_of(const json& j) {
  std::set<std::string> out;
  for (const auto& [key, value] : j.items()) {
    (void)value;
    out.insert(key);
  }
  return out;
}

// Parses a block whose allowed keys are those of its default serialization.
template <typename T>
T parse_block(const json& root, const std::string& name) {
  if (!root.contains(name)) return T{};
  const json& j = root.at(name);
  reject_unknown(j, keys_of(T{}.to_json()), name);
  return T::from_json(j);
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

void write_csv(const fs::path& path, const json& prov, const std::string& header,
               const std::vector<std::string>& rows) {
  std::string text = fmt::format("# provenance config_hash={} seed={} command={}\n",
                                 prov.at("config_hash").get<std::string>(), prov.at("seed").get<std::uint64_t>(),
                                 prov.at("command").get<std::string>());
  text += header + "\n";
  for (const auto& r : rows) text += r + "\n";
  write_file(path, text);
}

void write_json(const fs::path& path, const json& j) { write_file(path, j.dump(2) + "\n"); }

std::string num(double v) { return fmt::format("{:.17g}", v); }

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  check(!ec, ErrorCode::kIo, "cannot create directory '{}': {}", p.string(), ec.message());
}

void require_file(const fs::path& p, const std::string& what, const std::string& producer) {
  check(fs::exists(p), ErrorCode::kIo, "{} '{}' not found; run '{}' first", what, p.string(), producer);
}

// Loaded pieces shared by the sampling commands.
struct Trained {
  systems::TrajectoryDataset test;
  ae::Autoencoder autoencoder;
  std::unique_ptr<diffusion::NetworkDenoiser> denoiser;
  diffusion::Schedule schedule;
};

Trained load_trained(const RunConfig& cfg, const Layout& at) {
  require_file(at.test, "test split", "generate");
  require_file(at.autoencoder, "autoencoder", "train-ae");
  require_file(at.denoiser, "denoiser", "train-denoiser");
  Trained t;
  t.test = systems::load_dataset(at.test);
  t.autoencoder = ae::load_autoencoder(at.autoencoder);
  t.denoiser = std::make_unique<diffusion::NetworkDenoiser>(diffusion::load_denoiser(at.denoiser, &t.schedule));
  check(t.autoencoder.state_shape() == t.test.spec.state_shape(), ErrorCode::kShapeMismatch,
        "autoencoder states {} differ from dataset states {}", shape_string(t.autoencoder.state_shape()),
        shape_string(t.test.spec.state_shape()));
  check(t.denoiser->step_dim() == t.autoencoder.latent_dim(), ErrorCode::kShapeMismatch,
        "denoiser latent size {} differs from the autoencoder's {}", t.denoiser->step_dim(),
        t.autoencoder.latent_dim());
  check(cfg.evaluation.trajectory < t.test.count(), ErrorCode::kConfig,
        "evaluation.trajectory {} but the test split has {} trajectories", cfg.evaluation.trajectory,
        t.test.count());
  return t;
}

assim::Model make_model(const RunConfig& cfg, const Trained& t, const Options& opt) {
  return assim::Model{t.autoencoder, *t.denoiser,       cfg.stride, t.schedule, cfg.diffusion.sampler,
                      cfg.guidance,  opt.threads};
}

// Steps [begin, begin + count) of one test trajectory, [count, H, W, C].
Tensor truth_slice(const systems::TrajectoryDataset& d, std::size_t trajectory, std::size_t begin,
                   std::size_t count) {
  check(begin + count <= d.length(), ErrorCode::kConfig,
        "task needs steps [{}, {}) but test trajectories have {} steps", begin, begin + count, d.length());
  return d.trajectories.slice_rows(trajectory, trajectory + 1)
      .reshaped(Shape(d.trajectories.shape().begin() + 1, d.trajectories.shape().end()))
      .slice_rows(begin, begin + count);
}

obs::ObservationSet observations_for(const RunConfig& cfg, const Layout& at, const Tensor& truth,
                                     std::size_t steps) {
  if (!cfg.paths.observations.empty()) {
    const Container c = read_container(at.observations, "observations");
    obs::ObservationSet y = obs::ObservationSet::load(c, "");
    check(y.length() == steps, ErrorCode::kConfig,
          "observation file covers {} steps but the task observes {} (conditioning length)", y.length(), steps);
    return y;
  }
  obs::ObservationConfig oc = cfg.observation;
  oc.seed ^= stage_seed(cfg.seed, "layout");
  const Shape state(truth.shape().begin() + 1, truth.shape().end());
  return obs::observe(truth.slice_rows(0, steps), obs::layout(oc, state, steps), stage_seed(cfg.seed, "noise"));
}

void write_observations(const obs::ObservationSet& y, const fs::path& path, const json& prov) {
  Container c;
  c.kind = "observations";
  y.store(c, "");
  c.meta["provenance"] = prov;
  write_container(path, c);
}

// Writes a resumable checkpoint every `every` steps and at the end.
std::function<void(const TrainState&)> periodic(std::size_t every, std::size_t total,
                                                const std::function<void(const TrainState&)>& save) {
  return [=](const TrainState& s) {
    if (s.adam.step % every == 0 || s.adam.step == total) save(s);
  };
}

std::vector<std::string> loss_rows(const std::vector<double>& losses) {
  std::vector<std::string> rows;
  for (std::size_t i = 0; i < losses.size(); ++i) rows.push_back(fmt::format("{},{}", i + 1, num(losses[i])));
  return rows;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config.

json SystemBlock::to_json() const {
  json j;
  j["kind"] = systems::to_string(spec.kind);
  switch (spec.kind) {
    case systems::SystemKind::kLinearGaussian:
      j["dim"] = spec.state_size();
      j["rho"] = rho;
      j["angle"] = angle;
      break;
    case systems::SystemKind::kLorenz96:
      j["dim"] = spec.width;
      j["forcing"] = spec.forcing;
      j["dt"] = spec.dt;
      j["substeps"] = spec.substeps;
      break;
    case systems::SystemKind::kAdvection2d:
      j["height"] = spec.height;
      j["width"] = spec.width;
      j["channels"] = spec.channels;
      j["dt"] = spec.dt;
      j["velocity_x"] = spec.velocity_x;
      j["velocity_y"] = spec.velocity_y;
      j["diffusivity"] = spec.diffusivity;
      j["drag"] = spec.drag;
      j["forcing_amplitude"] = spec.forcing_amplitude;
      j["forcing_scale"] = spec.forcing_scale;
      break;
  }
  j["train"] = train;
  j["val"] = val;
  j["test"] = test;
  j["length"] = length;
  j["burn_in"] = burn_in;
  return j;
}

SystemBlock SystemBlock::from_json(const json& j) {
  check(j.is_object(), ErrorCode::kConfig, "'system' must be a JSON object");
  SystemBlock b;
  const auto kind = systems::parse_kind(get_or<std::string>(j, "kind", "linear-gaussian"));
  std::set<std::string> allowed{"kind", "train", "val", "test", "length", "burn_in"};
  switch (kind) {
    case systems::SystemKind::kLinearGaussian:
      allowed.insert({"dim", "rho", "angle"});
      reject_unknown(j, allowed, "system");
      b.rho = get_or(j, "rho", b.rho);
      b.angle = get_or(j, "angle", b.angle);
      b.spec = systems::linear_gaussian(get_or<std::size_t>(j, "dim", 4), b.rho, b.angle);
      break;
    case systems::SystemKind::kLorenz96:
      allowed.insert({"dim", "forcing", "dt", "substeps"});
      reject_unknown(j, allowed, "system");
      b.spec = systems::lorenz96(get_or<std::size_t>(j, "dim", 40), get_or(j, "forcing", 8.0),
                                 get_or(j, "dt", 0.05), get_or<std::size_t>(j, "substeps", 1));
      break;
    case systems::SystemKind::kAdvection2d: {
      allowed.insert({"height", "width", "channels", "dt", "velocity_x", "velocity_y", "diffusivity", "drag",
                      "forcing_amplitude", "forcing_scale"});
      reject_unknown(j, allowed, "system");
      auto& s = b.spec = systems::advection2d(get_or<std::size_t>(j, "height", 32),
                                              get_or<std::size_t>(j, "width", 32),
                                              get_or<std::size_t>(j, "channels", 1));
      s.dt = get_or(j, "dt", s.dt);
      s.velocity_x = get_or(j, "velocity_x", s.velocity_x);
      s.velocity_y = get_or(j, "velocity_y", s.velocity_y);
      s.diffusivity = get_or(j, "diffusivity", s.diffusivity);
      s.drag = get_or(j, "drag", s.drag);
      s.forcing_amplitude = get_or(j, "forcing_amplitude", s.forcing_amplitude);
      s.forcing_scale = get_or(j, "forcing_scale", s.forcing_scale);
      break;
    }
  }
  b.spec.validate();
  b.train = get_or(j, "train", b.train);
  b.val = get_or(j, "val", b.val);
  b.test = get_or(j, "test", b.test);
  b.length = get_or(j, "length", b.length);
  b.burn_in = get_or(j, "burn_in", b.burn_in);
  check(b.train >= 1 && b.test >= 1, ErrorCode::kConfig, "system.train and system.test must be >= 1");
  check(b.length >= 1, ErrorCode::kConfig, "system.length must be >= 1");
  return b;
}

json DiffusionBlock::to_json() const {
  return {{"model", model.to_json()},
          {"schedule", schedule.to_json()},
          {"sampler", {{"steps", sampler.steps}, {"churn", sampler.churn}, {"order", sampler.order},
                       {"corrections", sampler.corrections},
                       {"delta", sampler.delta}}}};
}

DiffusionBlock DiffusionBlock::from_json(const json& j) {
  reject_unknown(j, {"model", "schedule", "sampler"}, "diffusion");
  DiffusionBlock b;
  if (j.contains("model")) {
    reject_unknown(j.at("model"), keys_of(b.model.to_json()), "diffusion.model");
    b.model = diffusion::DenoiserConfig::from_json(j.at("model"));
  }
  if (j.contains("schedule")) {
    reject_unknown(j.at("schedule"), keys_of(b.schedule.to_json()), "diffusion.schedule");
    b.schedule = diffusion::Schedule::from_json(j.at("schedule"));
  }
  if (j.contains("sampler")) {
    const json& s = j.at("sampler");
    reject_unknown(s, {"steps", "churn", "order", "corrections", "delta"}, "diffusion.sampler");
    b.sampler.steps = get_or(s, "steps", b.sampler.steps);
    b.sampler.churn = get_or(s, "churn", b.sampler.churn);
    b.sampler.order = get_or(s, "order", b.sampler.order);
    b.sampler.corrections = get_or(s, "corrections", b.sampler.corrections);
    b.sampler.delta = get_or(s, "delta", b.sampler.delta);
  }
  check(b.sampler.steps >= 1, ErrorCode::kConfig, "diffusion.sampler.steps must be >= 1");
  check(b.sampler.churn >= 0.0 && b.sampler.churn <= 1.0, ErrorCode::kConfig,
        "diffusion.sampler.churn must be in [0, 1]");
  check(b.sampler.order == 1 || b.sampler.order == 2, ErrorCode::kConfig, "diffusion.sampler.order must be 1 or 2");
  check(b.sampler.delta > 0.0 && b.sampler.delta < 1.0, ErrorCode::kConfig, "diffusion.sampler.delta must be in (0, 1)");
  return b;
}

json EvaluationBlock::to_json() const { return {{"persistence", persistence}, {"trajectory", trajectory}}; }

EvaluationBlock EvaluationBlock::from_json(const json& j) {
  EvaluationBlock b;
  b.persistence = get_or(j, "persistence", b.persistence);
  b.trajectory = get_or(j, "trajectory", b.trajectory);
  return b;
}

json Paths::to_json() const {
  return {{"train", train},       {"val", val},
          {"test", test},         {"autoencoder", autoencoder},
          {"denoiser", denoiser}, {"observations", observations},
          {"ensemble", ensemble}, {"samples", samples},
          {"fields", fields}};
}

Paths Paths::from_json(const json& j) {
  Paths p;
  for (auto [field, key] : std::initializer_list<std::pair<std::string*, const char*>>{
           {&p.train, "train"},
           {&p.val, "val"},
           {&p.test, "test"},
           {&p.autoencoder, "autoencoder"},
           {&p.denoiser, "denoiser"},
           {&p.observations, "observations"},
           {&p.ensemble, "ensemble"},
           {&p.samples, "samples"},
           {&p.fields, "fields"}}) {
    *field = get_or<std::string>(j, key, "");
    check(field->empty() || fs::exists(*field), ErrorCode::kConfig, "paths.{}: '{}' does not exist", key, *field);
  }
  return p;
}

json RunConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["output_dir"] = output_dir.string();
  j["system"] = system.to_json();
  j["autoencoder"] = autoencoder.to_json();
  j["diffusion"] = diffusion.to_json();
  j["composition"] = {{"stride", stride}};
  j["observation"] = observation.to_json();
  j["task"] = task.to_json();
  j["task"]["guidance"] = guidance.to_json();
  j["evaluation"] = evaluation.to_json();
  j["paths"] = paths.to_json();
  return j;
}

std::string RunConfig::hash() const {
  json j = to_json();
  j.erase("output_dir");
  j.erase("paths");
  return fnv1a_hex(j.dump());
}

RunConfig RunConfig::from_json(const json& j) {
  reject_unknown(j, {"seed", "output_dir", "system", "autoencoder", "diffusion", "composition", "observation", "task",
                     "evaluation", "paths"},
                 "");
  RunConfig c;
  std::string block = "config";
  try {
    c.seed = get_or<std::uint64_t>(j, "seed", 0);
    c.output_dir = get_or<std::string>(j, "output_dir", c.output_dir.string());
    block = "system";
    if (j.contains("system")) c.system = SystemBlock::from_json(j.at("system"));
    block = "autoencoder";
    c.autoencoder = parse_block<ae::AutoencoderConfig>(j, "autoencoder");
    block = "diffusion";
    if (j.contains("diffusion")) c.diffusion = DiffusionBlock::from_json(j.at("diffusion"));
    block = "composition";
    if (j.contains("composition")) {
      reject_unknown(j.at("composition"), {"stride"}, "composition");
      c.stride = get_or(j.at("composition"), "stride", c.stride);
    }
    block = "observation";
    c.observation = parse_block<obs::ObservationConfig>(j, "observation");
    block = "task";
    if (j.contains("task")) {
      json t = j.at("task");
      std::set<std::string> allowed = keys_of(assim::TaskSpec{}.to_json());
      allowed.insert("guidance");
      reject_unknown(t, allowed, "task");
      if (t.contains("guidance")) {
        block = "task.guidance";
        reject_unknown(t.at("guidance"), keys_of(assim::GuidanceConfig{}.to_json()), "task.guidance");
        c.guidance = assim::GuidanceConfig::from_json(t.at("guidance"));
        t.erase("guidance");
        block = "task";
      }
      c.task = assim::TaskSpec::from_json(t);
    }
    block = "evaluation";
    if (j.contains("evaluation")) {
      reject_unknown(j.at("evaluation"), keys_of(EvaluationBlock{}.to_json()), "evaluation");
      c.evaluation = EvaluationBlock::from_json(j.at("evaluation"));
    }
    block = "paths";
    if (j.contains("paths")) {
      reject_unknown(j.at("paths"), keys_of(Paths{}.to_json()), "paths");
      c.paths = Paths::from_json(j.at("paths"));
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kConfig, "invalid value in '{}': {}", block, e.what());
  }
  const std::size_t w = c.diffusion.model.window;
  check(c.stride >= 1, ErrorCode::kConfig, "composition.stride must be >= 1");
  check(c.system.length >= w, ErrorCode::kConfig, "diffusion.model.window {} exceeds system.length {}", w,
        c.system.length);
  if (c.task.forecast() && c.task.slide != 0)
    check(c.task.context + c.task.slide <= w, ErrorCode::kConfig,
          "task.slide {} must be <= window - context = {}", c.task.slide, w > c.task.context ? w - c.task.context : 0);
  return c;
}

RunConfig RunConfig::parse(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::kConfig, "config is not valid JSON: {}", e.what());
  }
  return from_json(j);
}

RunConfig RunConfig::load(const fs::path& path) {
  check(fs::exists(path), ErrorCode::kConfig, "config file '{}' does not exist", path.string());
  return parse(read_file(path));
}

json provenance(const RunConfig& cfg, const std::string& command) {
  return {{"config_hash", cfg.hash()}, {"seed", cfg.seed}, {"command", command}};
}

std::uint64_t stage_seed(std::uint64_t seed, const std::string& stage) {
  return splitmix(seed ^ std::stoull(fnv1a_hex(stage), nullptr, 16));
}

Layout::Layout(const RunConfig& cfg) : root(cfg.output_dir) {
  auto pick = [&](const std::string& override_path, const fs::path& fallback) {
    return override_path.empty() ? root / fallback : fs::path(override_path);
  };
  train = pick(cfg.paths.train, "data/train.appa");
  val = pick(cfg.paths.val, "data/val.appa");
  test = pick(cfg.paths.test, "data/test.appa");
  stats = root / "data/stats.json";
  autoencoder = pick(cfg.paths.autoencoder, "autoencoder.appa");
  autoencoder_state = root / "autoencoder_state.appa";
  autoencoder_loss = root / "autoencoder_loss.csv";
  denoiser = pick(cfg.paths.denoiser, "denoiser.appa");
  denoiser_state = root / "denoiser_state.appa";
  denoiser_loss = root / "denoiser_loss.csv";
  samples = pick(cfg.paths.samples, "prior_samples.appa");
  observations = pick(cfg.paths.observations, "observations.appa");
  ensemble = pick(cfg.paths.ensemble, "ensemble.appa");
  metrics = root / "metrics.csv";
  summary = root / "metrics.json";
  psd = root / "psd.csv";
  psd_summary = root / "psd.json";
  diagnostics = root / "diagnostics.csv";
  fields = pick(cfg.paths.fields, "fields.appa");
}

// ---------------------------------------------------------------------------
// Ensemble files.

void save_ensemble(const EnsembleFile& e, const fs::path& path) {
  Container c;
  c.kind = "ensemble";
  c.meta = {{"task", e.task},
            {"seeds", e.seeds},
            {"trajectory", e.trajectory},
            {"truth_start", e.truth_start},
            {"provenance", e.provenance}};
  c.add("states", e.states);
  c.add("latents", e.latents);
  if (!e.persistence.empty()) c.add("persistence", e.persistence);
  write_container(path, c);
}

EnsembleFile load_ensemble(const fs::path& path) {
  const Container c = read_container(path, "ensemble");
  EnsembleFile e;
  try {
    e.task = c.meta.at("task").get<std::string>();
    e.seeds = c.meta.at("seeds").get<std::vector<std::uint64_t>>();
    e.trajectory = c.meta.at("trajectory").get<std::size_t>();
    e.truth_start = c.meta.at("truth_start").get<std::size_t>();
    e.provenance = c.meta.at("provenance");
  } catch (const json::exception& ex) {
    fail(ErrorCode::kHeaderParse, "malformed ensemble header: {}", ex.what());
  }
  e.states = c.tensor("states");
  e.latents = c.tensor("latents");
  if (c.has("persistence")) e.persistence = c.tensor("persistence");
  check(e.states.rank() == 5 && e.states.dim(0) == e.seeds.size(), ErrorCode::kHeaderMismatch,
        "ensemble states {} do not match {} seeds", shape_string(e.states.shape()), e.seeds.size());
  return e;
}

// ---------------------------------------------------------------------------
// Commands.

Outputs generate(const RunConfig& cfg, const Options& opt) {
  const Layout at(cfg);
  const json prov = provenance(cfg, "generate");
  ensure_dir(at.train.parent_path());
  ensure_dir(at.val.parent_path());
  ensure_dir(at.test.parent_path());
  ensure_dir(at.stats.parent_path());
  const auto& s = cfg.system;
  const Tensor raw_train =
      systems::generate(s.spec, s.train, s.length, s.burn_in, stage_seed(cfg.seed, "train"), opt.threads);
  const auto train = systems::standardize(raw_train, s.spec, "train");
  systems::save_dataset(train, at.train, prov);
  Outputs out{at.train};
  if (s.val > 0) {
    const Tensor raw = systems::generate(s.spec, s.val, s.length, s.burn_in, stage_seed(cfg.seed, "val"), opt.threads);
    systems::save_dataset(systems::standardize(raw, s.spec, "val", train.stats), at.val, prov);
    out.push_back(at.val);
  }
  const Tensor raw_test =
      systems::generate(s.spec, s.test, s.length, s.burn_in, stage_seed(cfg.seed, "test"), opt.threads);
  systems::save_dataset(systems::standardize(raw_test, s.spec, "test", train.stats), at.test, prov);
  out.push_back(at.test);
  write_json(at.stats, {{"provenance", prov},
                        {"spec", s.spec.to_json()},
                        {"stats", train.stats.to_json()},
                        {"splits", {{"train", s.train}, {"val", s.val}, {"test", s.test}}},
                        {"length", s.length}});
  out.push_back(at.stats);
  return out;
}

Outputs train_autoencoder(const RunConfig& cfg, const Options& opt) {
  const Layout at(cfg);
  const json prov = provenance(cfg, "train-ae");
  require_file(at.train, "training split", "generate");
  const auto train = systems::load_dataset(at.train);
  const systems::TrajectoryDataset val = fs::exists(at.val) ? systems::load_dataset(at.val) : train;
  const Shape state = train.spec.state_shape();
  ae::Autoencoder model(cfg.autoencoder, state, stage_seed(cfg.seed, "ae-init"));
  ensure_dir(at.autoencoder.parent_path());
  TrainState st;
  if (model.params().size() > 0) {
    if (opt.resume && fs::exists(at.autoencoder_state)) {
      const Container c = read_container(at.autoencoder_state, "autoencoder-checkpoint");
      const Shape saved = ae::Autoencoder::load(c).state_shape();
      check(saved == state, ErrorCode::kShapeMismatch, "checkpoint is for states {} but the dataset has {}",
            shape_string(saved), shape_string(state));
      st = TrainState::load(c, "train/");
      check(st.params.names() == model.params().names(), ErrorCode::kConfig,
            "autoencoder checkpoint '{}' was trained with a different architecture", at.autoencoder_state.string());
    }
    auto save = [&](const TrainState& s) {
      Container c;
      c.kind = "autoencoder-checkpoint";
      model.params() = s.params;
      model.store(c);
      s.store(c, "train/");
      c.meta["provenance"] = prov;
      write_container(at.autoencoder_state, c);
    };
    const std::size_t every = std::max<std::size_t>(1, cfg.autoencoder.steps / 10);
    ae::train_autoencoder(model, train.trajectories, val.trajectories, stage_seed(cfg.seed, "ae"), opt.threads, &st,
                          periodic(every, cfg.autoencoder.steps, save));
  }
  ae::save_autoencoder(model, at.autoencoder, prov);
  write_csv(at.autoencoder_loss, prov, "step,loss", loss_rows(st.losses));
  Outputs out{at.autoencoder, at.autoencoder_loss};
  if (fs::exists(at.autoencoder_state)) out.push_back(at.autoencoder_state);
  return out;
}

Outputs train_denoiser(const RunConfig& cfg, const Options& opt) {
  const Layout at(cfg);
  const json prov = provenance(cfg, "train-denoiser");
  require_file(at.train, "training split", "generate");
  require_file(at.autoencoder, "autoencoder", "train-ae");
  const auto train = systems::load_dataset(at.train);
  const auto& mc = cfg.diffusion.model;
  check(mc.window <= train.length(), ErrorCode::kConfig, "denoiser window {} exceeds the dataset length {}", mc.window,
        train.length());
  const ae::Autoencoder autoencoder = ae::load_autoencoder(at.autoencoder);
  check(autoencoder.state_shape() == train.spec.state_shape(), ErrorCode::kShapeMismatch,
        "autoencoder states {} differ from dataset states {}", shape_string(autoencoder.state_shape()),
        shape_string(train.spec.state_shape()));
  const Tensor latents = autoencoder.encode_mean(train.trajectories)
                             .reshaped({train.count(), train.length(), autoencoder.latent_dim()});
  Tensor val_latents;
  if (fs::exists(at.val)) {
    const auto val = systems::load_dataset(at.val);
    if (val.count() > 0 && val.length() >= mc.window)
      val_latents = autoencoder.encode_mean(val.trajectories)
                        .reshaped({val.count(), val.length(), autoencoder.latent_dim()});
  }
  diffusion::NetworkDenoiser model(mc, autoencoder.latent_shape(), stage_seed(cfg.seed, "denoiser-init"));
  TrainState st;
  if (opt.resume && fs::exists(at.denoiser_state)) {
    // The checkpoint keeps its latent normalization; the config supplies the
    // step budget.
    Container c = read_container(at.denoiser_state, "denoiser-checkpoint");
    c.meta["denoiser"]["config"] = mc.to_json();
    diffusion::NetworkDenoiser saved = diffusion::NetworkDenoiser::load(c);
    check(saved.step_dim() == autoencoder.latent_dim() && saved.params().names() == model.params().names(),
          ErrorCode::kConfig, "denoiser checkpoint '{}' was trained with a different architecture",
          at.denoiser_state.string());
    st = TrainState::load(c, "train/");
    model = std::move(saved);
  }
  auto save = [&](const TrainState& s) {
    Container c;
    c.kind = "denoiser-checkpoint";
    model.params() = s.params;
    model.store(c);
    s.store(c, "train/");
    c.meta["provenance"] = prov;
    write_container(at.denoiser_state, c);
  };
  ensure_dir(at.denoiser.parent_path());
  const std::size_t every = std::max<std::size_t>(1, mc.steps / 10);
  diffusion::train_denoiser(model, latents, val_latents, cfg.diffusion.schedule, stage_seed(cfg.seed, "denoiser"),
                            opt.threads, &st, periodic(every, mc.steps, save));
  diffusion::save_denoiser(model, cfg.diffusion.schedule, at.denoiser, prov);
  write_csv(at.denoiser_loss, prov, "step,loss", loss_rows(st.losses));
  return {at.denoiser, at.denoiser_loss, at.denoiser_state};
}

Outputs sample_prior(const RunConfig& cfg, const Options& opt) {
  const Layout at(cfg);
  const Trained t = load_trained(cfg, at);
  const assim::Model model = make_model(cfg, t, opt);
  const auto r = assim::prior_ensemble(model, cfg.task.length, cfg.task.members, stage_seed(cfg.seed, "prior"),
                                       cfg.task.start);
  EnsembleFile e;
  e.task = "prior";
  e.states = r.states;
  e.latents = r.latents;
  e.seeds = r.seeds;
  e.trajectory = cfg.evaluation.trajectory;
  e.truth_start = static_cast<std::size_t>(cfg.task.start);
  e.provenance = provenance(cfg, "sample-prior");
  ensure_dir(at.samples.parent_path());
  save_ensemble(e, at.samples);
  return {at.samples};
}

Outputs assimilate(const RunConfig& cfg, const Options& opt) {
  using assim::TaskKind;
  check(cfg.task.kind == TaskKind::kReanalysis || cfg.task.kind == TaskKind::kFiltering, ErrorCode::kConfig,
        "assimilate runs reanalysis or filtering, not '{}'; use forecast", assim::to_string(cfg.task.kind));
  const Layout at(cfg);
  const json prov = provenance(cfg, "assimilate");
  const Trained t = load_trained(cfg, at);
  const assim::Model model = make_model(cfg, t, opt);
  const std::size_t start = static_cast<std::size_t>(cfg.task.start), len = cfg.task.length;
  const Tensor truth = truth_slice(t.test, cfg.evaluation.trajectory, start, len);
  const obs::ObservationSet y = observations_for(cfg, at, truth, len);
  const std::uint64_t seed = stage_seed(cfg.seed, "assimilate");
  const auto r = cfg.task.kind == TaskKind::kReanalysis ? assim::reanalysis(model, y, cfg.task.members, seed, cfg.task.start)
                                                        : assim::filtering(model, y, cfg.task.members, seed, cfg.task.start);
  EnsembleFile e;
  e.task = assim::to_string(cfg.task.kind);
  e.states = r.states;
  e.latents = r.latents;
  e.seeds = r.seeds;
  e.trajectory = cfg.evaluation.trajectory;
  e.truth_start = cfg.task.kind == TaskKind::kReanalysis ? start : start + len - 1;
  e.provenance = prov;
  e.provenance["cg_failures"] = r.cg_failures;
  ensure_dir(at.ensemble.parent_path());
  save_ensemble(e, at.ensemble);
  Outputs out{at.ensemble};
  if (cfg.paths.observations.empty()) {
    write_observations(y, at.observations, prov);
    out.push_back(at.observations);
  }
  return out;
}

Outputs forecast(const RunConfig& cfg, const Options& opt) {
  using assim::TaskKind;
  check(cfg.task.forecast(), ErrorCode::kConfig, "forecast runs forecast-observational or forecast-fullstate, not '{}'",
        assim::to_string(cfg.task.kind));
  const Layout at(cfg);
  const json prov = provenance(cfg, "forecast");
  const Trained t = load_trained(cfg, at);
  const assim::Model model = make_model(cfg, t, opt);
  const std::size_t start = static_cast<std::size_t>(cfg.task.start), k = cfg.task.context, lead = cfg.task.lead();
  const std::size_t w = t.denoiser->window();
  const std::size_t slide = cfg.task.slide == 0 ? w / 2 : cfg.task.slide;
  check(k + slide <= w || cfg.task.kind == TaskKind::kForecastObservational, ErrorCode::kConfig,
        "conditioning length {} plus slide {} exceeds the window {}", k, slide, w);
  const Tensor all = truth_slice(t.test, cfg.evaluation.trajectory, start, cfg.task.length);
  const Tensor context = all.slice_rows(0, k);
  const std::uint64_t seed = stage_seed(cfg.seed, "forecast");
  Outputs out;
  assim::EnsembleResult r;
  if (cfg.task.kind == TaskKind::kForecastFullState) {
    r = assim::forecast_fullstate(model, context, lead, cfg.task.slide, cfg.task.members, seed, cfg.task.start);
  } else {
    const obs::ObservationSet y = observations_for(cfg, at, all, k);
    r = assim::forecast_observational(model, y, lead, cfg.task.slide, cfg.task.members, seed, cfg.task.start);
    if (cfg.paths.observations.empty()) {
      write_observations(y, at.observations, prov);
      out.push_back(at.observations);
    }
  }
  EnsembleFile e;
  e.task = assim::to_string(cfg.task.kind);
  e.states = r.states;
  e.latents = r.latents;
  e.seeds = r.seeds;
  e.trajectory = cfg.evaluation.trajectory;
  e.truth_start = start + k;
  e.persistence = assim::persistence(context.slice_rows(k - 1, k).reshaped(t.test.spec.state_shape()), lead);
  e.provenance = prov;
  e.provenance["cg_failures"] = r.cg_failures;
  ensure_dir(at.ensemble.parent_path());
  save_ensemble(e, at.ensemble);
  out.insert(out.begin(), at.ensemble);
  return out;
}

Outputs evaluate(const RunConfig& cfg, const Options&) {
  const Layout at(cfg);
  const json prov = provenance(cfg, "evaluate");
  require_file(at.ensemble, "ensemble", "assimilate' or 'forecast");
  require_file(at.test, "test split", "generate");
  const EnsembleFile e = load_ensemble(at.ensemble);
  const auto test = systems::load_dataset(at.test);
  check(e.trajectory < test.count(), ErrorCode::kShapeMismatch, "ensemble refers to test trajectory {} of {}",
        e.trajectory, test.count());
  const std::size_t m = e.states.dim(0), steps = e.states.dim(1);
  const Shape state(e.states.shape().begin() + 2, e.states.shape().end());
  check(state == test.spec.state_shape(), ErrorCode::kShapeMismatch, "ensemble states {} differ from truth states {}",
        shape_string(state), shape_string(test.spec.state_shape()));
  const Tensor truth = truth_slice(test, e.trajectory, e.truth_start, steps);
  Shape member_shape{1};
  member_shape.insert(member_shape.end(), e.states.shape().begin(), e.states.shape().end());
  Shape truth_shape{1};
  truth_shape.insert(truth_shape.end(), truth.shape().begin(), truth.shape().end());
  eval::Ensemble ens{e.states.reshaped(member_shape), truth.reshaped(truth_shape)};

  std::vector<std::string> rows;
  json per_lead = json::array();
  const auto table = eval::metric_table(ens);
  if (m < 2)
    fmt::print(stderr, "note: spread and spread-skill ratio need at least 2 members; the ensemble has {}\n", m);
  for (const auto& r : table) {
    rows.push_back(fmt::format("ensemble,{},{},skill,{}", r.lead, r.channel, num(r.skill)));
    if (m >= 2) {
      rows.push_back(fmt::format("ensemble,{},{},spread,{}", r.lead, r.channel, num(*r.spread)));
      rows.push_back(fmt::format("ensemble,{},{},ssr,{}", r.lead, r.channel, r.ratio ? num(*r.ratio) : "nan"));
    }
    rows.push_back(fmt::format("ensemble,{},{},crps,{}", r.lead, r.channel, num(r.crps)));
    json row = {{"lead", r.lead}, {"variable", r.channel}, {"skill", r.skill}, {"crps", r.crps}};
    if (r.spread) row["spread"] = *r.spread;
    if (r.ratio) row["ssr"] = *r.ratio;
    per_lead.push_back(row);
  }
  json summary = {{"provenance", prov},        {"task", e.task},   {"members", m},
                  {"leads", steps},            {"variables", state.back()},
                  {"ensemble_provenance", e.provenance}, {"rows", per_lead}};
  double skill_mean = 0.0;
  for (const auto& r : table) skill_mean += r.skill / static_cast<double>(table.size());
  summary["mean_skill"] = skill_mean;
  if (cfg.evaluation.persistence) {
    check(!e.persistence.empty(), ErrorCode::kConfig,
          "evaluation.persistence needs a forecast ensemble; '{}' has no baseline", e.task);
    Shape p_shape{1, 1};
    p_shape.insert(p_shape.end(), e.persistence.shape().begin(), e.persistence.shape().end());
    const eval::Ensemble base{e.persistence.reshaped(p_shape), ens.truth};
    json base_rows = json::array();
    double base_mean = 0.0;
    const auto base_table = eval::metric_table(base);
    for (const auto& r : base_table) {
      rows.push_back(fmt::format("persistence,{},{},skill,{}", r.lead, r.channel, num(r.skill)));
      rows.push_back(fmt::format("persistence,{},{},crps,{}", r.lead, r.channel, num(r.crps)));
      base_rows.push_back({{"lead", r.lead}, {"variable", r.channel}, {"skill", r.skill}, {"crps", r.crps}});
      base_mean += r.skill / static_cast<double>(base_table.size());
    }
    summary["persistence"] = {{"rows", base_rows}, {"mean_skill", base_mean}};
  }
  ensure_dir(at.metrics.parent_path());
  write_csv(at.metrics, prov, "source,lead,variable,metric,value", rows);
  write_json(at.summary, summary);
  return {at.metrics, at.summary};
}

Outputs psd(const RunConfig& cfg, const Options&) {
  const Layout at(cfg);
  const json prov = provenance(cfg, "psd");
  require_file(at.test, "test split", "generate");
  require_file(at.samples, "prior samples", "sample-prior");
  const auto test = systems::load_dataset(at.test);
  const EnsembleFile samples = load_ensemble(at.samples);
  const auto data_bands = eval::psd(test.trajectories);
  const auto sample_bands = eval::psd(samples.states);
  std::vector<std::string> rows;
  auto emit = [&](const char* source, const eval::SpectrumBands& b) {
    for (std::size_t k = 0; k < b.wavenumber.size(); ++k)
      rows.push_back(fmt::format("{},{},{},{},{}", source, num(b.wavenumber[k]), num(b.median[k]), num(b.p5[k]),
                                 num(b.p95[k])));
  };
  emit("data", data_bands);
  emit("samples", sample_bands);
  const std::size_t low = std::max<std::size_t>(1, data_bands.wavenumber.size() / 3);
  double worst = 0.0;
  for (std::size_t k = 0; k < low; ++k)
    worst = std::max(worst, std::abs(sample_bands.median[k] - data_bands.median[k]) / data_bands.median[k]);
  ensure_dir(at.psd.parent_path());
  write_csv(at.psd, prov, "source,wavenumber,median,p5,p95", rows);
  write_json(at.psd_summary, {{"provenance", prov}, {"low_bins", low}, {"max_rel_median_deviation", worst}});
  return {at.psd, at.psd_summary};
}

Outputs diagnostics(const RunConfig& cfg, const Options&) {
  const Layout at(cfg);
  const json prov = provenance(cfg, "diagnostics");
  check(fs::exists(at.fields), ErrorCode::kConfig, "diagnostics needs a fields container at '{}' (paths.fields)",
        at.fields.string());
  const Container c = read_container(at.fields, "fields");
  eval::LatLonGrid grid;
  const Tensor& lat = c.tensor("latitudes");
  grid.latitudes.assign(lat.values().begin(), lat.values().end());
  const Tensor& phi = c.tensor("phi");
  check(phi.rank() == 2 && phi.dim(0) == grid.latitudes.size(), ErrorCode::kShapeMismatch,
        "phi must be [latitudes, longitudes], got {}", shape_string(phi.shape()));
  grid.columns = phi.dim(1);
  if (c.meta.contains("equator_exclusion")) grid.equator_exclusion = c.meta.at("equator_exclusion").get<double>();
  if (c.meta.contains("polar_exclusion")) grid.polar_exclusion = c.meta.at("polar_exclusion").get<double>();
  const auto d = eval::geostrophic_diagnostics(phi, c.tensor("u"), c.tensor("v"), grid);
  std::vector<std::string> rows{fmt::format("points,{}", d.points), fmt::format("mean_abs_cos_theta,{}", num(d.mean_abs_cos)),
                                fmt::format("correlation,{}", d.correlation ? num(*d.correlation) : "nan"),
                                fmt::format("degenerate,{}", d.degenerate ? 1 : 0)};
  if (c.has("pressure") && c.has("temperature")) {
    const Tensor dh = eval::altitude_difference(phi, c.tensor("pressure"), c.tensor("temperature"));
    double worst = 0.0, mean = 0.0;
    for (double v : dh.values()) {
      worst = std::max(worst, std::abs(v));
      mean += std::abs(v) / static_cast<double>(dh.size());
    }
    rows.push_back(fmt::format("altitude_mean_abs_difference_m,{}", num(mean)));
    rows.push_back(fmt::format("altitude_max_abs_difference_m,{}", num(worst)));
  }
  ensure_dir(at.diagnostics.parent_path());
  write_csv(at.diagnostics, prov, "metric,value", rows);
  return {at.diagnostics};
}

const std::vector<std::string>& commands() {
  static const std::vector<std::string> names{"generate", "train-ae", "train-denoiser", "sample-prior", "assimilate",
                                              "forecast", "evaluate", "psd",           "diagnostics"};
  return names;
}

Outputs run(const std::string& command, const RunConfig& cfg, const Options& opt) {
  if (command == "generate") return generate(cfg, opt);
  if (command == "train-ae") return train_autoencoder(cfg, opt);
  if (command == "train-denoiser") return train_denoiser(cfg, opt);
  if (command == "sample-prior") return sample_prior(cfg, opt);
  if (command == "assimilate") return assimilate(cfg, opt);
  if (command == "forecast") return forecast(cfg, opt);
  if (command == "evaluate") return evaluate(cfg, opt);
  if (command == "psd") return psd(cfg, opt);
  if (command == "diagnostics") return diagnostics(cfg, opt);
  fail(ErrorCode::kConfig, "unknown command '{}'", command);
}

}  // namespace appa::pipeline
