// tests/chain_test.cc

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include <filesystem>
#include <fstream>
#include <sstream>

#include "chaingem/chain.h"
#include "doctest.h"
#include "json.hpp"
#include "scratch_dir.h"

using namespace chaingem;

namespace {

// A configuration small enough to run in well under a second.
std::string tiny_config(const std::string& extra = "") {
  return R"({
    "base_task": {"n_utterances": 120},
    "followup_tasks": [{"snr_db": 0, "n_utterances": 120, "channel_mix": 0.5}],
    "splits": {"train": 0.8, "dev": 0.1, "test": 0.1},
    "stage1": {"epochs": 4},
    "stage2": {"rounds": 1},
    "stage3": {"epochs": 2, "multitask_epochs": 3, "eval_every": 3})" +
         extra + "}";
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST_SUITE("chain") {

TEST_CASE("empty config gives the documented defaults") {
  const auto c = parse_config("{}");
  CHECK(c.alphabet_size == 10);
  CHECK(c.feature_dim == 16);
  CHECK(c.frames_per_symbol == 3);
  CHECK(c.labeled_fraction == 0.3);
  CHECK(c.method == Method::kGem);
  CHECK(c.num_tasks() == 2);
  CHECK(c.followups[0].snr_db == 0.0);
  CHECK_FALSE(c.base.snr_db.has_value());
  CHECK(c.stage3.gem.delta == 0.3);
  CHECK(c.stage3.gem.memory_fraction == 0.01);
  CHECK(c.stages == std::array<bool, 3>{true, true, true});
  CHECK(config_to_json(c) == config_to_json(PipelineConfig{}));
}

TEST_CASE("shipped default config matches the built-in defaults") {
  const auto c = load_config(std::string(CHAINGEM_SOURCE_DIR) + "/configs/default.json");
  CHECK(config_to_json(c) == config_to_json(PipelineConfig{}));
}

TEST_CASE("config JSON round-trips") {
  auto c = parse_config(tiny_config(R"(, "method": "ewc", "seed": 77, "stages": [1, 3],
                                        "labeled_fraction": 1.0)"));
  CHECK(c.method == Method::kEwc);
  CHECK(c.seed == 77);
  CHECK(c.stages == std::array<bool, 3>{true, false, true});
  const auto text = config_to_json(c);
  CHECK(config_to_json(parse_config(text)) == text);
}

TEST_CASE("config errors are reported as config errors") {
  CHECK_THROWS_AS(parse_config("{"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"alphabet_sise": 10})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"stage3": {"gem": {"delta": 0.3, "bogus": 1}}})"),
                  ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"method": "sgd"})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"alphabet_size": "ten"})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"alphabet_size": 1})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"stages": [4]})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"labeled_fraction": 1.0})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"labeled_fraction": 0.0})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"followup_tasks": []})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"stage3": {"base_replay": "both"}})"), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/config.json"), ConfigError);
  CHECK_NOTHROW(parse_config(R"({"followup_tasks": [], "stages": [1, 2]})"));
}

TEST_CASE("method names round-trip") {
  for (Method m : {Method::kGem, Method::kFinetune, Method::kMultitask, Method::kEwc}) {
    CHECK(parse_method(method_name(m)) == m);
  }
}

TEST_CASE("world construction is deterministic and seed dependent") {
  const auto c = parse_config(tiny_config());
  const World a = make_world(c);
  const World b = make_world(c);
  REQUIRE(a.tasks.size() == 2);
  CHECK(a.tasks[1].spec.task_id == 1);
  CHECK(a.tasks[0].train.size() == 96);
  CHECK(a.base_split.labeled.size() == 29);
  CHECK(a.base_split.unlabeled.size() == 67);
  CHECK(a.text_pool.size() == a.base_split.unlabeled.size());
  CHECK(a.tasks[1].test[0].features == b.tasks[1].test[0].features);
  CHECK(a.text_pool == b.text_pool);
  auto c2 = c;
  c2.seed = 1;
  CHECK_FALSE(make_world(c2).tasks[0].train[0].features == a.tasks[0].train[0].features);
}

TEST_CASE("stage 1 with every label is plain supervised training") {
  auto c = parse_config(tiny_config(R"(, "labeled_fraction": 1.0, "stages": [1, 3])"));
  const World w = make_world(c);
  CHECK(w.base_split.unlabeled.empty());
  CHECK(w.text_pool.empty());
  const auto s1 = run_stage1(c, w);
  const auto direct = train_supervised(init_model(c.shape(), derive_seed(c.seed, "stage1-init")),
                                       w.tasks[0].train, c.stage1.epochs, c.stage1.train,
                                       derive_seed(c.seed, "stage1-train"));
  CHECK(s1.asr.theta == direct.model.theta);
  CHECK(s1.report.labeled == 96);
  CHECK(s1.report.cross_test_cer.size() == 1);
}

TEST_CASE("disabled stage 2 passes models through") {
  auto c = parse_config(tiny_config(R"(, "stages": [1, 3])"));
  const World w = make_world(c);
  const auto s1 = run_stage1(c, w);
  const auto s2 = run_stage2(c, w, s1.asr, s1.synth);
  CHECK_FALSE(s2.report.ran);
  CHECK(s2.asr.theta == s1.asr.theta);
  CHECK(s2.synth.prototypes == s1.synth.prototypes);
}

TEST_CASE("three-task continual run") {
  auto c = parse_config(tiny_config(
      R"(, "followup_tasks": [{"snr_db": 0, "n_utterances": 100, "channel_mix": 0.5},
                              {"snr_db": 5, "n_utterances": 100, "channel_mix": 0.3}])"));
  const World w = make_world(c);
  const auto s1 = run_stage1(c, w);
  for (Method m : {Method::kGem, Method::kEwc, Method::kMultitask, Method::kFinetune}) {
    c.method = m;
    const auto r = run_stage3(c, w, s1.asr, s1.synth);
    CAPTURE(method_name(m));
    REQUIRE(r.errors.num_phases() == 3);
    REQUIRE(r.errors.num_tasks() == 3);
    CHECK(r.errors.phase_labels ==
          std::vector<std::string>{"pretrained", "after_task_1", "after_task_2"});
    CHECK(r.snapshots.front().theta == s1.asr.theta);
    CHECK(r.reference_errors.num_phases() == 3);
    CHECK(std::isfinite(r.metrics.avg));
    CHECK(std::isfinite(r.metrics.bwt));
    CHECK(std::isfinite(r.metrics.fwt));
    if (m == Method::kGem) {
      REQUIRE(r.memories.size() == 3);
      CHECK(r.memories[0].capacity() == memory_capacity(0.01, w.tasks[0].train.size()));
      for (const auto& s : r.memories[0].samples()) CHECK(s.synthetic);
    } else {
      CHECK(r.memories.empty());
    }
    if (m == Method::kFinetune) {
      CHECK(r.errors.entries == r.reference_errors.entries);
      CHECK(r.metrics.fwt == 0.0);
    }
  }
}

TEST_CASE("pipeline artifacts are deterministic and rebuildable") {
  test::ScratchDir dir("chain");
  auto c = parse_config(tiny_config(R"(, "stage3": {"epochs": 2, "eval_every": 3,
                                                   "trace_projection": true})"));
  run_pipeline(c, (dir.path / "a").string());
  run_pipeline(c, (dir.path / "b").string());
  for (const char* f : {kMetricsFile, kErrorMatrixFile, kCurvesFile, "reference_curves.csv",
                        "memories.tsv", "projection_trace.csv", "config.json"}) {
    CAPTURE(f);
    REQUIRE(std::filesystem::exists(dir.path / "a" / f));
    CHECK(slurp(dir.path / "a" / f) == slurp(dir.path / "b" / f));
  }
  CHECK(slurp(dir.path / "a" / "checkpoints" / "phase_1.ckpt") ==
        slurp(dir.path / "b" / "checkpoints" / "phase_1.ckpt"));

  const auto metrics = nlohmann::json::parse(slurp(dir.path / "a" / kMetricsFile));
  for (const char* k : {"avg", "bwt", "fwt", "final_cer_task_0", "final_cer_task_1",
                        "stage1_dev_cer", "stage1_cross_test_cer_task_1",
                        "stage2_dev_cer_after", "reference_final_cer_task_0"}) {
    CAPTURE(k);
    CHECK(metrics.contains(k));
  }
  for (const auto& [k, v] : metrics.items()) CHECK_FALSE(v.is_object());

  std::ifstream csv(dir.path / "a" / kErrorMatrixFile);
  const ErrorMatrix stored = read_error_matrix_csv(csv);
  const World w = make_world(c);
  std::vector<RecognizerModel> snaps;
  for (int i = 0; i < 2; ++i) {
    snaps.push_back(
        load_model((dir.path / "a" / "checkpoints" / ("phase_" + std::to_string(i) + ".ckpt"))
                       .string()));
  }
  const auto rebuilt = build_error_matrix(snaps, {w.tasks[0].test, w.tasks[1].test});
  CHECK(rebuilt.entries == stored.entries);

  std::ifstream curves(dir.path / "a" / kCurvesFile);
  const Curve curve = read_curve_csv(curves);
  REQUIRE_FALSE(curve.empty());
  for (std::size_t i = 1; i < curve.size(); ++i) CHECK(curve[i].step >= curve[i - 1].step);
}

TEST_CASE("stage 3 can resume from stored stage checkpoints") {
  test::ScratchDir dir("resume");
  auto c = parse_config(tiny_config());
  const std::string out = (dir.path / "run").string();
  c.stages = {true, true, false};
  run_pipeline(c, out);
  CHECK_FALSE(std::filesystem::exists(dir.path / "run" / kErrorMatrixFile));
  c.stages = {false, false, true};
  run_pipeline(c, out);
  CHECK(std::filesystem::exists(dir.path / "run" / kErrorMatrixFile));

  c.stages = {true, true, true};
  run_pipeline(c, (dir.path / "full").string());
  CHECK(slurp(dir.path / "run" / kErrorMatrixFile) == slurp(dir.path / "full" / kErrorMatrixFile));

  c.stages = {false, false, true};
  CHECK_THROWS_AS(run_pipeline(c, (dir.path / "empty").string()), ConfigError);
}

}  // TEST_SUITE
