// chaingem/chain.h

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

#ifndef CHAINGEM_CHAIN_H_
#define CHAINGEM_CHAIN_H_

// The three-stage speech-chain pipeline:
//   1. supervised recognizer and synthesizer training on the labeled part of
//      the clean base task;
//   2. semi-supervised refinement on the unlabeled part (optional);
//   3. learning the follow-up tasks with the configured method, with phase
//      snapshots, the error matrix and the summary metrics.

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "chaingem/baselines.h"
#include "chaingem/gem.h"
#include "chaingem/metrics.h"
#include "chaingem/recognizer.h"
#include "chaingem/synthesizer.h"
#include "chaingem/tasks.h"

namespace chaingem {

enum class Method { kGem, kFinetune, kMultitask, kEwc };

std::string method_name(Method m);
/// Accepts "gem", "finetune", "multitask", "ewc"; throws ConfigError otherwise.
Method parse_method(std::string_view name);

enum class BaseReplay { kSynthetic, kReal };

struct TaskConfig {
  std::optional<double> snr_db;
  int n_utterances = 1000;
  int length_min = 4;
  int length_max = 12;
  double channel_mix = 0.0;
};

struct Stage1Config {
  int epochs = 30;
  TrainConfig train;
};

struct Stage2Config {
  int rounds = 3;
  double confidence = 0.8;
};

struct Stage3Config {
  int epochs = 10;
  /// Optimizer for fine-tuning and EWC.
  TrainConfig train;
  int multitask_epochs = 30;
  GemConfig gem;
  double ewc_lambda = 1e4;
  BaseReplay base_replay = BaseReplay::kSynthetic;
  long eval_every = 25;
  bool trace_projection = false;
};

struct PipelineConfig {
  int alphabet_size = 10;
  int feature_dim = 16;
  int hidden_dim = 16;
  int frames_per_symbol = kDefaultFramesPerSymbol;
  double prototype_scale = 1.0;
  double emission_sigma = 0.3;

  TaskConfig base;
  std::vector<TaskConfig> followups{TaskConfig{0.0, 1000, 4, 12, 0.5}};
  SplitRatios splits;
  double labeled_fraction = 0.3;

  /// stages[i] enables stage i + 1.
  std::array<bool, 3> stages{true, true, true};
  Method method = Method::kGem;
  Stage1Config stage1;
  Stage2Config stage2;
  Stage3Config stage3;

  std::uint64_t seed = 0;
  std::string output_dir;
  bool write_datasets = false;

  void validate() const;
  RecognizerShape shape() const;
  std::size_t num_tasks() const { return 1 + followups.size(); }
};

/// Strict parse: unknown keys are errors, missing keys take the defaults
/// above. Throws ConfigError.
PipelineConfig parse_config(std::string_view json_text);
PipelineConfig load_config(const std::string& path);
/// Canonical JSON with every key present.
std::string config_to_json(const PipelineConfig& config);

/// The generated data of one experiment.
struct World {
  SymbolAlphabet alphabet;
  SynthesizerModel emitter;
  /// tasks[0] is the base task.
  std::vector<TaskDataset> tasks;
  LabeledSplit base_split;
  /// Text-only label sequences for stage 2.
  std::vector<LabelSeq> text_pool;
};

World make_world(const PipelineConfig& config);

struct Stage1Report {
  std::size_t labeled = 0;
  std::size_t unlabeled = 0;
  double dev_cer = 0.0;
  double test_cer = 0.0;
  /// Test CER of the stage-1 model on each follow-up task.
  std::vector<double> cross_test_cer;
  Curve curve;
};

struct Stage1Result {
  RecognizerModel asr;
  SynthesizerModel synth;
  Stage1Report report;
};

struct Stage2Report {
  bool ran = false;
  double dev_cer_before = 0.0;
  double dev_cer_after = 0.0;
  std::vector<RefineRoundStats> rounds;
  Curve curve;
};

struct Stage2Result {
  RecognizerModel asr;
  SynthesizerModel synth;
  Stage2Report report;
};

struct Stage3Result {
  RecognizerModel asr;
  /// Phase i snapshot: model after learning task i (phase 0 = input model).
  std::vector<RecognizerModel> snapshots;
  ErrorMatrix errors;
  CLMetrics metrics;
  Curve curve;
  /// Fine-tune run under the same data and seeds, used for FWT.
  std::vector<RecognizerModel> reference_snapshots;
  ErrorMatrix reference_errors;
  Curve reference_curve;
  std::vector<EpisodicMemory> memories;
  std::vector<ProjectionTraceRow> trace;
};

Stage1Result run_stage1(const PipelineConfig& config, const World& world);
/// Passthrough when stage 2 is disabled.
Stage2Result run_stage2(const PipelineConfig& config, const World& world,
                        const RecognizerModel& asr, const SynthesizerModel& synth);
Stage3Result run_stage3(const PipelineConfig& config, const World& world,
                        const RecognizerModel& asr, const SynthesizerModel& synth);

/// Called with (stage, "running" | "done" | "skipped" | "failed").
using StageObserver = std::function<void(int stage, const std::string& status)>;

/// Runs the enabled stages and writes every artifact into `out_dir`. When
/// stage 1 is disabled its checkpoints are loaded from `out_dir`. When stage 3
/// runs without stage 2 in the same call, the stage-2 checkpoints are used if
/// stage 1 was loaded and they exist.
void run_pipeline(const PipelineConfig& config, const std::string& out_dir,
                  const StageObserver& observer = {});

/// Artifact names inside a run directory.
inline constexpr char kMetricsFile[] = "metrics.json";
inline constexpr char kErrorMatrixFile[] = "error_matrix.csv";
inline constexpr char kCurvesFile[] = "curves.csv";
inline constexpr char kManifestFile[] = "manifest.json";

}  // namespace chaingem

#endif  // CHAINGEM_CHAIN_H_
