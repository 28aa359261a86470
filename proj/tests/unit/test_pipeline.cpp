// Copyright 2026 The Appa Toy Authors
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "core/container.hpp"
#include "core/error.hpp"
#include "pipeline/pipeline.hpp"

namespace appa::pipeline {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("appa_pipeline_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const fs::path& p) {
  std::vector<std::string> out;
  std::istringstream in(slurp(p));
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

// Data rows of a pipeline CSV: everything after the provenance and header lines.
std::size_t data_rows(const fs::path& p) { return lines(p).size() - 2; }

json tiny(const fs::path& dir) {
  return {{"seed", 7},
          {"output_dir", dir.string()},
          {"system", {{"kind", "linear-gaussian"}, {"dim", 3}, {"train", 12}, {"val", 2}, {"test", 2}, {"length", 12}}},
          {"autoencoder", {{"mode", "identity"}}},
          {"diffusion",
           {{"model", {{"window", 4}, {"hidden", 16}, {"blocks", 1}, {"steps", 10}, {"batch", 8}, {"micro_batch", 8}}},
            {"sampler", {{"steps", 6}}}}},
          {"observation", {{"fraction", 0.5}, {"noise_std", 0.1}}},
          {"task", {{"kind", "reanalysis"}, {"length", 8}, {"members", 3}}}};
}

RunConfig config(const json& j) { return RunConfig::from_json(j); }

void run_all(const RunConfig& cfg, const std::vector<std::string>& commands) {
  for (const auto& c : commands) run(c, cfg);
}

TEST(RunConfig, UnknownKeyIsNamed) {
  json j = tiny(scratch("unknown"));
  j["foo"] = 1;
  try {
    config(j);
    FAIL() << "accepted an unknown key";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConfig);
    EXPECT_NE(std::string(e.what()).find("foo"), std::string::npos) << e.what();
  }
  json nested = tiny(scratch("unknown"));
  nested["diffusion"]["sampler"]["foo"] = 2;
  try {
    config(nested);
    FAIL() << "accepted an unknown nested key";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("foo"), std::string::npos) << e.what();
  }
}

TEST(RunConfig, WindowLongerThanTrajectoriesIsRejected) {
  json j = tiny(scratch("window"));
  j["diffusion"]["model"]["window"] = 16;
  EXPECT_THROW(config(j), Error);
}

TEST(RunConfig, MissingReferencedFileIsRejected) {
  json j = tiny(scratch("paths"));
  j["paths"] = {{"train", "/nonexistent/train.appa"}};
  EXPECT_THROW(config(j), Error);
}

TEST(RunConfig, HashIgnoresOutputLocation) {
  json a = tiny(scratch("hash_a"));
  json b = tiny(scratch("hash_b"));
  EXPECT_EQ(config(a).hash(), config(b).hash());
  b["seed"] = 8;
  EXPECT_NE(config(a).hash(), config(b).hash());
  EXPECT_EQ(config(a).hash(), RunConfig::parse(config(a).to_json().dump()).hash());
}

TEST(Generate, RoundTripsAndRepeats) {
  const RunConfig a = config(tiny(scratch("gen_a")));
  const RunConfig b = config(tiny(scratch("gen_b")));
  generate(a);
  generate(b);
  const Layout la(a), lb(b);
  EXPECT_EQ(slurp(la.train), slurp(lb.train));
  EXPECT_EQ(slurp(la.test), slurp(lb.test));
  const auto ds = systems::load_dataset(la.train);
  EXPECT_EQ(ds.spec.to_json(), a.system.spec.to_json());
  EXPECT_EQ(ds.count(), 12u);
  EXPECT_EQ(ds.length(), 12u);
}

TEST(Train, SmokeRunWritesOneLossRowPerStep) {
  json j = tiny(scratch("smoke"));
  j["autoencoder"] = {{"mode", "mlp"}, {"latent_dim", 2}, {"hidden", 8}, {"steps", 10}, {"batch", 4}, {"micro_batch", 4}};
  const RunConfig cfg = config(j);
  run_all(cfg, {"generate", "train-ae", "train-denoiser"});
  const Layout at(cfg);
  EXPECT_EQ(data_rows(at.autoencoder_loss), 10u);
  EXPECT_EQ(data_rows(at.denoiser_loss), 10u);
  EXPECT_EQ(lines(at.denoiser_loss)[1], "step,loss");
}

TEST(Train, ResumeContinuesTheStepCounter) {
  json j = tiny(scratch("resume"));
  const RunConfig first = config(j);
  run_all(first, {"generate", "train-ae", "train-denoiser"});
  const Layout at(first);
  const auto before = lines(at.denoiser_loss);
  j["diffusion"]["model"]["steps"] = 16;
  const RunConfig second = config(j);
  train_denoiser(second, {1, true});
  const auto after = lines(at.denoiser_loss);
  ASSERT_EQ(after.size() - 2, 16u);
  for (std::size_t i = 2; i < before.size(); ++i) EXPECT_EQ(after[i], before[i]);
  EXPECT_EQ(after.back().substr(0, 3), "16,");
}

TEST(Train, FreshRunIgnoresCheckpoint) {
  json j = tiny(scratch("fresh"));
  const RunConfig cfg = config(j);
  run_all(cfg, {"generate", "train-ae", "train-denoiser"});
  const Layout at(cfg);
  const std::string before = slurp(at.denoiser_loss);
  train_denoiser(cfg, {1, false});
  EXPECT_EQ(slurp(at.denoiser_loss), before);
}

TEST(Train, DatasetShorterThanWindowFailsBeforeTraining) {
  const fs::path dir = scratch("short");
  json j = tiny(dir);
  j["system"]["length"] = 4;
  const RunConfig small = config(j);
  run_all(small, {"generate", "train-ae"});
  j["system"]["length"] = 12;
  j["paths"] = {{"train", (dir / "data/train.appa").string()}};
  j["diffusion"]["model"]["window"] = 6;
  const RunConfig cfg = config(j);
  try {
    train_denoiser(cfg);
    FAIL() << "trained a window longer than the dataset";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConfig);
  }
  EXPECT_FALSE(fs::exists(Layout(cfg).denoiser_loss));
}

class Pipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    base_ = new RunConfig(config(tiny(scratch("shared"))));
    run_all(*base_, {"generate", "train-ae", "train-denoiser"});
  }
  static void TearDownTestSuite() {
    delete base_;
    base_ = nullptr;
  }

  // Reuses the shared trained models from a fresh output directory.
  static RunConfig derived(const std::string& name, json patch = json::object()) {
    json j = tiny(scratch(name));
    const Layout shared(*base_);
    j["paths"] = {{"train", shared.train.string()},
                  {"test", shared.test.string()},
                  {"autoencoder", shared.autoencoder.string()},
                  {"denoiser", shared.denoiser.string()}};
    j.merge_patch(patch);
    return config(j);
  }

  static RunConfig* base_;
};

RunConfig* Pipeline::base_ = nullptr;

TEST_F(Pipeline, ReanalysisFeedsEvaluate) {
  const RunConfig cfg = derived("reanalysis");
  run_all(cfg, {"assimilate", "evaluate"});
  const Layout at(cfg);
  const EnsembleFile e = load_ensemble(at.ensemble);
  EXPECT_EQ(e.task, "reanalysis");
  EXPECT_EQ(e.states.dim(0), 3u);
  EXPECT_EQ(e.states.dim(1), 8u);
  const std::size_t variables = e.states.shape().back();
  EXPECT_EQ(data_rows(at.metrics), variables * 8 * 4);
  EXPECT_EQ(lines(at.metrics)[1], "source,lead,variable,metric,value");
}

TEST_F(Pipeline, OutputsCarryProvenance) {
  const RunConfig cfg = derived("provenance");
  run_all(cfg, {"assimilate", "evaluate", "sample-prior"});
  const Layout at(cfg);
  const std::string head = "# provenance config_hash=" + cfg.hash() + " seed=7 command=";
  for (const auto& csv : {at.metrics, Layout(*base_).denoiser_loss}) EXPECT_EQ(lines(csv)[0].substr(0, head.size()), head) << csv;
  for (const auto& file : {at.ensemble, at.samples}) {
    const json prov = load_ensemble(file).provenance;
    EXPECT_EQ(prov.at("config_hash"), cfg.hash());
    EXPECT_EQ(prov.at("seed"), 7u);
  }
  const Container obs = read_container(at.observations, "observations");
  EXPECT_EQ(obs.meta.at("provenance").at("config_hash"), cfg.hash());
  const Container den = read_container(Layout(*base_).denoiser, "denoiser");
  EXPECT_EQ(den.meta.at("provenance").at("command"), "train-denoiser");
  const json summary = json::parse(slurp(at.summary));
  EXPECT_EQ(summary.at("provenance").at("config_hash"), cfg.hash());
}

TEST_F(Pipeline, SingleMemberEnsembleSkipsSpreadMetrics) {
  const RunConfig cfg = derived("single", {{"task", {{"members", 1}}}});
  run_all(cfg, {"assimilate", "evaluate"});
  const Layout at(cfg);
  const std::size_t variables = load_ensemble(at.ensemble).states.shape().back();
  EXPECT_EQ(data_rows(at.metrics), variables * 8 * 2);
  for (const auto& line : lines(at.metrics)) EXPECT_EQ(line.find(",spread,"), std::string::npos);
}

TEST_F(Pipeline, IdenticalConfigGivesIdenticalFiles) {
  const RunConfig a = derived("same_a");
  const RunConfig b = derived("same_b");
  run_all(a, {"assimilate", "evaluate"});
  run_all(b, {"assimilate", "evaluate"});
  EXPECT_EQ(slurp(Layout(a).ensemble), slurp(Layout(b).ensemble));
  EXPECT_EQ(slurp(Layout(a).metrics), slurp(Layout(b).metrics));
}

TEST_F(Pipeline, PerfectEnsembleScoresZero) {
  const RunConfig cfg = derived("perfect");
  run(cfg.task.kind == assim::TaskKind::kReanalysis ? "assimilate" : "forecast", cfg);
  const Layout at(cfg);
  EnsembleFile e = load_ensemble(at.ensemble);
  const auto test = systems::load_dataset(at.test);
  const std::size_t steps = e.states.dim(1), per = e.states.size() / (e.states.dim(0) * steps);
  const std::size_t len = test.length();
  for (std::size_t m = 0; m < e.states.dim(0); ++m)
    for (std::size_t t = 0; t < steps; ++t)
      for (std::size_t i = 0; i < per; ++i)
        e.states[(m * steps + t) * per + i] =
            test.trajectories[(e.trajectory * len + e.truth_start + t) * per + i];
  save_ensemble(e, at.ensemble);
  evaluate(cfg);
  for (const auto& line : lines(at.metrics)) {
    if (line.find(",skill,") == std::string::npos && line.find(",crps,") == std::string::npos) continue;
    EXPECT_EQ(line.substr(line.rfind(',') + 1), "0") << line;
  }
}

TEST_F(Pipeline, ForecastEmitsPersistenceBlock) {
  const RunConfig cfg = derived("persistence", {{"task", {{"kind", "forecast-fullstate"}, {"context", 2}, {"length", 8}}},
                                                {"evaluation", {{"persistence", true}}}});
  run_all(cfg, {"forecast", "evaluate"});
  const Layout at(cfg);
  const EnsembleFile e = load_ensemble(at.ensemble);
  EXPECT_EQ(e.states.dim(1), 6u);
  std::size_t ensemble_rows = 0, persistence_rows = 0;
  for (const auto& line : lines(at.metrics)) {
    if (line.rfind("ensemble,", 0) == 0) ++ensemble_rows;
    if (line.rfind("persistence,", 0) == 0) ++persistence_rows;
  }
  const std::size_t variables = e.states.shape().back();
  EXPECT_EQ(ensemble_rows, variables * 6 * 4);
  EXPECT_EQ(persistence_rows, variables * 6 * 2);
  EXPECT_TRUE(json::parse(slurp(at.summary)).contains("persistence"));
}

TEST_F(Pipeline, PersistenceNeedsAForecast) {
  const RunConfig cfg = derived("no_baseline", {{"evaluation", {{"persistence", true}}}});
  run(std::string("assimilate"), cfg);
  EXPECT_THROW(evaluate(cfg), Error);
}

TEST_F(Pipeline, ObservationsBeyondContextAreRejected) {
  const RunConfig reanalysis = derived("obs_source");
  assimilate(reanalysis);
  const RunConfig cfg =
      derived("obs_beyond", {{"task", {{"kind", "forecast-observational"}, {"context", 2}, {"length", 8}}},
                             {"paths", {{"observations", Layout(reanalysis).observations.string()}}}});
  try {
    forecast(cfg);
    FAIL() << "forecast accepted observations past the conditioning steps";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConfig);
  }
}

TEST_F(Pipeline, FilteringKeepsOneStep) {
  const RunConfig cfg = derived("filtering", {{"task", {{"kind", "filtering"}}}});
  run_all(cfg, {"assimilate", "evaluate"});
  const EnsembleFile e = load_ensemble(Layout(cfg).ensemble);
  EXPECT_EQ(e.task, "filtering");
  EXPECT_EQ(e.states.dim(1), 1u);
  EXPECT_EQ(e.truth_start, 7u);
}

TEST(Commands, UnknownCommandIsAConfigError) {
  const RunConfig cfg = config(tiny(scratch("command")));
  try {
    run("train-everything", cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConfig);
  }
  EXPECT_EQ(commands().size(), 9u);
}

TEST(Commands, MissingInputsNameTheProducer) {
  const RunConfig cfg = config(tiny(scratch("missing")));
  try {
    train_denoiser(cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("generate"), std::string::npos) << e.what();
  }
}

}  // namespace
}  // namespace appa::pipeline
