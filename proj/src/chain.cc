// src/chain.cc

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

#include "chaingem/chain.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "io_util.h"
#include "json.hpp"

namespace chaingem {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

std::string method_name(Method m) {
  switch (m) {
    case Method::kGem:
      return "gem";
    case Method::kFinetune:
      return "finetune";
    case Method::kMultitask:
      return "multitask";
    case Method::kEwc:
      return "ewc";
  }
  return "unknown";
}

Method parse_method(std::string_view name) {
  if (name == "gem") return Method::kGem;
  if (name == "finetune") return Method::kFinetune;
  if (name == "multitask") return Method::kMultitask;
  if (name == "ewc") return Method::kEwc;
  throw ConfigError("unknown method '" + std::string(name) +
                    "' (expected gem, finetune, multitask or ewc)");
}

namespace {

// ---- config parsing -------------------------------------------------------

// Walks one JSON object, rejecting keys nobody asked for.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + " must be an object");
  }

  ~ObjectReader() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown key " + where(key));
    }
  }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void number(const std::string& key, double* out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) throw ConfigError(where(key) + " must be a number");
      *out = v->get<double>();
    }
  }

  template <typename Int>
  void integer(const std::string& key, Int* out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) throw ConfigError(where(key) + " must be an integer");
      if constexpr (std::is_unsigned_v<Int>) {
        if (v->is_number_unsigned()) {
          *out = static_cast<Int>(v->get<std::uint64_t>());
        } else {
          throw ConfigError(where(key) + " must be non-negative");
        }
      } else {
        *out = static_cast<Int>(v->get<long long>());
      }
    }
  }

  void boolean(const std::string& key, bool* out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError(where(key) + " must be true or false");
      *out = v->get<bool>();
    }
  }

  void string(const std::string& key, std::string* out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) throw ConfigError(where(key) + " must be a string");
      *out = v->get<std::string>();
    }
  }

  std::string where(const std::string& key) const { return path_ + "." + key; }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_optimizer(const json& j, const std::string& path, TrainConfig* t) {
  ObjectReader r(j, path);
  r.number("learning_rate", &t->adam.learning_rate);
  r.number("beta1", &t->adam.beta1);
  r.number("beta2", &t->adam.beta2);
  r.number("epsilon", &t->adam.epsilon);
  r.integer("batch_size", &t->batch_size);
  r.number("smoothing", &t->smoothing);
}

void read_task(const json& j, const std::string& path, TaskConfig* t) {
  ObjectReader r(j, path);
  if (const json* v = r.find("snr_db")) {
    if (v->is_null() || (v->is_string() && v->get<std::string>() == "clean")) {
      t->snr_db.reset();
    } else if (v->is_number()) {
      t->snr_db = v->get<double>();
    } else {
      throw ConfigError(r.where("snr_db") + " must be a number, null or \"clean\"");
    }
  }
  r.integer("n_utterances", &t->n_utterances);
  r.integer("length_min", &t->length_min);
  r.integer("length_max", &t->length_max);
  r.number("channel_mix", &t->channel_mix);
}

ordered_json optimizer_json(const TrainConfig& t) {
  ordered_json j;
  j["learning_rate"] = t.adam.learning_rate;
  j["beta1"] = t.adam.beta1;
  j["beta2"] = t.adam.beta2;
  j["epsilon"] = t.adam.epsilon;
  j["batch_size"] = t.batch_size;
  j["smoothing"] = t.smoothing;
  return j;
}

ordered_json task_json(const TaskConfig& t) {
  ordered_json j;
  j["snr_db"] = t.snr_db ? ordered_json(*t.snr_db) : ordered_json(nullptr);
  j["n_utterances"] = t.n_utterances;
  j["length_min"] = t.length_min;
  j["length_max"] = t.length_max;
  j["channel_mix"] = t.channel_mix;
  return j;
}

TaskSpec task_spec(const PipelineConfig& c, std::size_t index) {
  const TaskConfig& t = index == 0 ? c.base : c.followups.at(index - 1);
  TaskSpec s;
  s.task_id = static_cast<int>(index);
  s.snr_db = t.snr_db;
  s.n_utterances = t.n_utterances;
  s.length_min = t.length_min;
  s.length_max = t.length_max;
  s.seed = derive_seed(c.seed, "task", index);
  s.channel_mix = t.channel_mix;
  s.frames_per_symbol = c.frames_per_symbol;
  return s;
}

}  // namespace

void PipelineConfig::validate() const {
  (void)SymbolAlphabet(alphabet_size);
  shape().validate();
  if (frames_per_symbol < 1) throw ConfigError("frames_per_symbol must be positive");
  if (!(prototype_scale > 0.0) || !std::isfinite(prototype_scale)) {
    throw ConfigError("prototype_scale must be positive");
  }
  if (!(emission_sigma >= 0.0) || !std::isfinite(emission_sigma)) {
    throw ConfigError("emission_sigma must be >= 0");
  }
  for (std::size_t i = 0; i < num_tasks(); ++i) {
    const TaskConfig& t = i == 0 ? base : followups[i - 1];
    if (!(t.channel_mix >= 0.0 && t.channel_mix < 1.0)) {
      throw ConfigError("channel_mix must lie in [0, 1)");
    }
    if (t.snr_db && !std::isfinite(*t.snr_db)) throw ConfigError("snr_db must be finite");
    task_spec(*this, i).validate();
  }
  const double sum = splits.train + splits.dev + splits.test;
  if (splits.train <= 0.0 || splits.dev < 0.0 || splits.test <= 0.0 ||
      std::abs(sum - 1.0) > 1e-9) {
    throw ConfigError("split ratios must be positive (dev may be 0) and sum to 1");
  }
  if (!(labeled_fraction > 0.0 && labeled_fraction <= 1.0)) {
    throw ConfigError("labeled_fraction must lie in (0, 1]");
  }
  if (stages[1] && labeled_fraction >= 1.0) {
    throw ConfigError("stage 2 needs unlabeled data: labeled_fraction must be < 1");
  }
  if (stages[2] && followups.empty()) {
    throw ConfigError("stage 3 needs at least one follow-up task");
  }
  if (stage1.epochs < 0 || stage3.epochs < 0 || stage3.multitask_epochs < 0) {
    throw ConfigError("epochs must be non-negative");
  }
  stage1.train.validate();
  if (stage2.rounds < 0) throw ConfigError("stage2 rounds must be non-negative");
  if (!(stage2.confidence >= 0.0 && stage2.confidence <= 1.0)) {
    throw ConfigError("stage2 confidence must lie in [0, 1]");
  }
  stage3.train.validate();
  stage3.gem.validate();
  if (!(stage3.ewc_lambda >= 0.0) || !std::isfinite(stage3.ewc_lambda)) {
    throw ConfigError("ewc_lambda must be >= 0");
  }
  if (stage3.eval_every < 0) throw ConfigError("stage3 eval_every must be non-negative");
}

RecognizerShape PipelineConfig::shape() const {
  return {feature_dim, hidden_dim, alphabet_size};
}

PipelineConfig parse_config(std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  PipelineConfig c;
  {
    ObjectReader r(j, "config");
    r.integer("alphabet_size", &c.alphabet_size);
    r.integer("feature_dim", &c.feature_dim);
    r.integer("hidden_dim", &c.hidden_dim);
    r.integer("frames_per_symbol", &c.frames_per_symbol);
    r.number("prototype_scale", &c.prototype_scale);
    r.number("emission_sigma", &c.emission_sigma);
    if (const json* v = r.find("base_task")) read_task(*v, "config.base_task", &c.base);
    if (const json* v = r.find("followup_tasks")) {
      if (!v->is_array()) throw ConfigError("config.followup_tasks must be an array");
      c.followups.clear();
      for (std::size_t i = 0; i < v->size(); ++i) {
        TaskConfig t{0.0, 1000, 4, 12, 0.5};
        read_task((*v)[i], "config.followup_tasks[" + std::to_string(i) + "]", &t);
        c.followups.push_back(t);
      }
    }
    if (const json* v = r.find("splits")) {
      ObjectReader s(*v, "config.splits");
      s.number("train", &c.splits.train);
      s.number("dev", &c.splits.dev);
      s.number("test", &c.splits.test);
    }
    r.number("labeled_fraction", &c.labeled_fraction);
    if (const json* v = r.find("stages")) {
      if (!v->is_array()) throw ConfigError("config.stages must be an array of 1, 2, 3");
      c.stages = {false, false, false};
      for (const auto& s : *v) {
        if (!s.is_number_integer() || s.get<int>() < 1 || s.get<int>() > 3) {
          throw ConfigError("config.stages entries must be 1, 2 or 3");
        }
        c.stages[static_cast<std::size_t>(s.get<int>() - 1)] = true;
      }
    }
    std::string method = method_name(c.method);
    r.string("method", &method);
    c.method = parse_method(method);
    if (const json* v = r.find("stage1")) {
      ObjectReader s(*v, "config.stage1");
      s.integer("epochs", &c.stage1.epochs);
      if (const json* o = s.find("optimizer")) {
        read_optimizer(*o, "config.stage1.optimizer", &c.stage1.train);
      }
    }
    if (const json* v = r.find("stage2")) {
      ObjectReader s(*v, "config.stage2");
      s.integer("rounds", &c.stage2.rounds);
      s.number("confidence", &c.stage2.confidence);
    }
    if (const json* v = r.find("stage3")) {
      ObjectReader s(*v, "config.stage3");
      s.integer("epochs", &c.stage3.epochs);
      if (const json* o = s.find("optimizer")) {
        read_optimizer(*o, "config.stage3.optimizer", &c.stage3.train);
      }
      s.integer("multitask_epochs", &c.stage3.multitask_epochs);
      if (const json* g = s.find("gem")) {
        ObjectReader gr(*g, "config.stage3.gem");
        gr.number("delta", &c.stage3.gem.delta);
        gr.number("memory_fraction", &c.stage3.gem.memory_fraction);
        gr.number("qp_tolerance", &c.stage3.gem.qp_tolerance);
        gr.integer("qp_max_iterations", &c.stage3.gem.qp_max_iterations);
      }
      s.number("ewc_lambda", &c.stage3.ewc_lambda);
      std::string replay = c.stage3.base_replay == BaseReplay::kReal ? "real" : "synthetic";
      s.string("base_replay", &replay);
      if (replay == "synthetic") {
        c.stage3.base_replay = BaseReplay::kSynthetic;
      } else if (replay == "real") {
        c.stage3.base_replay = BaseReplay::kReal;
      } else {
        throw ConfigError("config.stage3.base_replay must be \"synthetic\" or \"real\"");
      }
      s.integer("eval_every", &c.stage3.eval_every);
      s.boolean("trace_projection", &c.stage3.trace_projection);
    }
    r.integer("seed", &c.seed);
    r.string("output_dir", &c.output_dir);
    r.boolean("write_datasets", &c.write_datasets);
  }
  c.validate();
  return c;
}

PipelineConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_json(const PipelineConfig& c) {
  ordered_json j;
  j["alphabet_size"] = c.alphabet_size;
  j["feature_dim"] = c.feature_dim;
  j["hidden_dim"] = c.hidden_dim;
  j["frames_per_symbol"] = c.frames_per_symbol;
  j["prototype_scale"] = c.prototype_scale;
  j["emission_sigma"] = c.emission_sigma;
  j["base_task"] = task_json(c.base);
  j["followup_tasks"] = ordered_json::array();
  for (const auto& t : c.followups) j["followup_tasks"].push_back(task_json(t));
  j["splits"] = {{"train", c.splits.train}, {"dev", c.splits.dev}, {"test", c.splits.test}};
  j["labeled_fraction"] = c.labeled_fraction;
  j["stages"] = ordered_json::array();
  for (int s = 0; s < 3; ++s) {
    if (c.stages[static_cast<std::size_t>(s)]) j["stages"].push_back(s + 1);
  }
  j["method"] = method_name(c.method);
  j["stage1"]["epochs"] = c.stage1.epochs;
  j["stage1"]["optimizer"] = optimizer_json(c.stage1.train);
  j["stage2"]["rounds"] = c.stage2.rounds;
  j["stage2"]["confidence"] = c.stage2.confidence;
  ordered_json& s3 = j["stage3"];
  s3["epochs"] = c.stage3.epochs;
  s3["optimizer"] = optimizer_json(c.stage3.train);
  s3["multitask_epochs"] = c.stage3.multitask_epochs;
  s3["gem"]["delta"] = c.stage3.gem.delta;
  s3["gem"]["memory_fraction"] = c.stage3.gem.memory_fraction;
  s3["gem"]["qp_tolerance"] = c.stage3.gem.qp_tolerance;
  s3["gem"]["qp_max_iterations"] = c.stage3.gem.qp_max_iterations;
  s3["ewc_lambda"] = c.stage3.ewc_lambda;
  s3["base_replay"] = c.stage3.base_replay == BaseReplay::kReal ? "real" : "synthetic";
  s3["eval_every"] = c.stage3.eval_every;
  s3["trace_projection"] = c.stage3.trace_projection;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["write_datasets"] = c.write_datasets;
  return j.dump(2) + "\n";
}

World make_world(const PipelineConfig& c) {
  c.validate();
  World w{SymbolAlphabet(c.alphabet_size), {}, {}, {}, {}};
  w.emitter = make_prototypes(w.alphabet, c.feature_dim, c.prototype_scale, c.emission_sigma,
                              derive_seed(c.seed, "emitter"));
  for (std::size_t i = 0; i < c.num_tasks(); ++i) {
    w.tasks.push_back(make_task(task_spec(c, i), w.alphabet, w.emitter, c.splits));
  }
  w.base_split =
      split_labeled_unlabeled(w.tasks[0].train, c.labeled_fraction, derive_seed(c.seed, "labeled"));
  if (!w.base_split.unlabeled.empty()) {
    w.text_pool = sample_label_sequences(w.alphabet, w.base_split.unlabeled.size(),
                                         c.base.length_min, c.base.length_max,
                                         derive_seed(c.seed, "text-pool"));
  }
  return w;
}

Stage1Result run_stage1(const PipelineConfig& c, const World& w) {
  const UtteranceList& labeled = w.base_split.labeled;
  const std::vector<EvalTarget> eval{{0, "dev", w.tasks[0].dev}};
  TrainResult tr = train_supervised(init_model(c.shape(), derive_seed(c.seed, "stage1-init")),
                                    labeled, c.stage1.epochs, c.stage1.train,
                                    derive_seed(c.seed, "stage1-train"), eval);
  Stage1Result out{std::move(tr.model), fit_synthesizer(labeled, c.alphabet_size), {}};
  out.report.labeled = labeled.size();
  out.report.unlabeled = w.base_split.unlabeled.size();
  out.report.dev_cer = w.tasks[0].dev.empty() ? 0.0 : corpus_cer(out.asr, w.tasks[0].dev);
  out.report.test_cer = corpus_cer(out.asr, w.tasks[0].test);
  for (std::size_t i = 1; i < w.tasks.size(); ++i) {
    out.report.cross_test_cer.push_back(corpus_cer(out.asr, w.tasks[i].test));
  }
  out.report.curve = std::move(tr.curve);
  return out;
}

Stage2Result run_stage2(const PipelineConfig& c, const World& w, const RecognizerModel& asr,
                        const SynthesizerModel& synth) {
  Stage2Result out{asr, synth, {}};
  const UtteranceList& dev = w.tasks[0].dev;
  const auto dev_cer = [&](const RecognizerModel& m) {
    return dev.empty() ? corpus_cer(m, w.tasks[0].test) : corpus_cer(m, dev);
  };
  out.report.dev_cer_before = dev_cer(asr);
  out.report.dev_cer_after = out.report.dev_cer_before;
  if (!c.stages[1]) return out;

  RefineConfig rc;
  rc.train = c.stage1.train;
  rc.confidence = c.stage2.confidence;
  rc.frames_per_symbol = c.frames_per_symbol;
  const std::vector<EvalTarget> eval{{0, "dev", dev}};
  RefineResult r = refine_semi_supervised(asr, synth, w.base_split.labeled, w.base_split.unlabeled,
                                          w.text_pool, c.stage2.rounds, rc,
                                          derive_seed(c.seed, "stage2"), eval);
  out.asr = std::move(r.asr);
  out.synth = std::move(r.synth);
  out.report.ran = true;
  out.report.dev_cer_after = dev_cer(out.asr);
  out.report.rounds = std::move(r.rounds);
  out.report.curve = std::move(r.curve);
  return out;
}

namespace {

struct SequenceRun {
  std::vector<RecognizerModel> snapshots;
  Curve curve;
  std::vector<EpisodicMemory> memories;
  std::vector<ProjectionTraceRow> trace;
};

void append_shifted(Curve* into, const Curve& rows, long offset) {
  for (CurveRow r : rows) {
    r.step += offset;
    into->push_back(std::move(r));
  }
}

SequenceRun run_sequence(Method method, const PipelineConfig& c, const World& w,
                         const RecognizerModel& asr, const SynthesizerModel& synth) {
  SequenceRun out;
  out.snapshots.push_back(asr);
  std::vector<EvalTarget> eval;
  for (const auto& t : w.tasks) eval.push_back({t.spec.task_id, "dev", t.dev});

  TrainConfig train = c.stage3.train;
  train.eval_every = c.stage3.eval_every;
  long offset = 0;
  for (std::size_t j = 1; j < w.tasks.size(); ++j) {
    const std::uint64_t seed = derive_seed(c.seed, "stage3", j);
    const RecognizerModel& current = out.snapshots.back();
    const UtteranceList& data = w.tasks[j].train;
    switch (method) {
      case Method::kFinetune: {
        TrainResult r = fine_tune(current, data, c.stage3.epochs, train, seed, eval);
        append_shifted(&out.curve, r.curve, offset);
        offset += r.steps;
        out.snapshots.push_back(std::move(r.model));
        break;
      }
      case Method::kEwc: {
        const UtteranceList& previous = j == 1 ? w.base_split.labeled : w.tasks[j - 1].train;
        const EwcState state =
            ewc_prepare(current, previous, train.smoothing, c.stage3.ewc_lambda);
        TrainResult r = ewc_train(current, state, data, c.stage3.epochs, train, seed, eval);
        append_shifted(&out.curve, r.curve, offset);
        offset += r.steps;
        out.snapshots.push_back(std::move(r.model));
        break;
      }
      case Method::kMultitask: {
        std::vector<std::span<const Utterance>> pool{w.base_split.labeled};
        for (std::size_t k = 1; k <= j; ++k) pool.emplace_back(w.tasks[k].train);
        TrainResult r =
            multitask_train(c.shape(), pool, c.stage3.multitask_epochs, train, seed, eval);
        append_shifted(&out.curve, r.curve, offset);
        offset += r.steps;
        out.snapshots.push_back(std::move(r.model));
        break;
      }
      case Method::kGem: {
        ContinualOptions opt;
        opt.gem = c.stage3.gem;
        opt.batch_size = train.batch_size;
        opt.smoothing = train.smoothing;
        opt.frames_per_symbol = c.frames_per_symbol;
        opt.eval_every = c.stage3.eval_every;
        opt.trace_projection = c.stage3.trace_projection;
        opt.synthesize_replay = c.stage3.base_replay == BaseReplay::kSynthetic;
        if (out.memories.empty()) {
          EpisodicMemory base(0, memory_capacity(c.stage3.gem.memory_fraction,
                                                 w.tasks[0].train.size()));
          if (c.stage3.base_replay == BaseReplay::kReal) {
            for (const auto& u : w.base_split.labeled) {
              if (base.full()) break;
              base.push({u, false});
            }
          }
          out.memories.push_back(std::move(base));
        }
        ContinualResult r = continual_learn(current, synth, data, static_cast<int>(j),
                                            std::move(out.memories), opt, c.stage3.epochs,
                                            seed, eval);
        append_shifted(&out.curve, r.curve, offset);
        for (auto row : r.trace) {
          row.step += offset;
          out.trace.push_back(std::move(row));
        }
        offset += r.steps;
        out.memories = std::move(r.memories);
        out.snapshots.push_back(std::move(r.asr));
        break;
      }
    }
  }
  return out;
}

ErrorMatrix matrix_for(const std::vector<RecognizerModel>& snapshots, const World& w) {
  std::vector<std::span<const Utterance>> tests;
  std::vector<int> ids;
  for (const auto& t : w.tasks) {
    tests.emplace_back(t.test);
    ids.push_back(t.spec.task_id);
  }
  ErrorMatrix r = build_error_matrix(snapshots, tests, ids);
  r.phase_labels.clear();
  r.phase_labels.push_back("pretrained");
  for (std::size_t i = 1; i < snapshots.size(); ++i) {
    r.phase_labels.push_back("after_task_" + std::to_string(i));
  }
  return r;
}

}  // namespace

Stage3Result run_stage3(const PipelineConfig& c, const World& w, const RecognizerModel& asr,
                        const SynthesizerModel& synth) {
  if (w.tasks.size() < 2) throw ConfigError("stage 3 needs at least one follow-up task");
  Stage3Result out;
  SequenceRun run = run_sequence(c.method, c, w, asr, synth);
  out.errors = matrix_for(run.snapshots, w);
  if (c.method == Method::kFinetune) {
    out.reference_snapshots = run.snapshots;
    out.reference_errors = out.errors;
    out.reference_curve = run.curve;
  } else {
    SequenceRun ref = run_sequence(Method::kFinetune, c, w, asr, synth);
    out.reference_errors = matrix_for(ref.snapshots, w);
    out.reference_snapshots = std::move(ref.snapshots);
    out.reference_curve = std::move(ref.curve);
  }
  std::vector<double> ft(w.tasks.size(), 0.0);
  for (std::size_t j = 1; j < ft.size(); ++j) ft[j] = out.reference_errors.at(j, j);
  out.metrics = compute_metrics(out.errors, ft);
  out.asr = run.snapshots.back();
  out.snapshots = std::move(run.snapshots);
  out.curve = std::move(run.curve);
  out.memories = std::move(run.memories);
  out.trace = std::move(run.trace);
  return out;
}

// ---- artifacts --------------------------------------------------------------

namespace {

std::string path_in(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

template <typename Fn>
void write_atomic(const std::string& path, Fn&& fill) {
  std::ostringstream os;
  fill(os);
  io::write_file_atomic(path, os.str());
}

void save_model_atomic(const std::string& path, const RecognizerModel& m) {
  write_atomic(path, [&](std::ostream& os) { save_model(os, m); });
}

void save_synth_atomic(const std::string& path, const SynthesizerModel& s) {
  write_atomic(path, [&](std::ostream& os) { save_synthesizer(os, s); });
}

void write_curve(const std::string& path, const Curve& curve) {
  write_atomic(path, [&](std::ostream& os) { write_curve_csv(os, curve); });
}

void write_matrix(const std::string& path, const ErrorMatrix& r) {
  write_atomic(path, [&](std::ostream& os) { write_error_matrix_csv(os, r); });
}

}  // namespace

void run_pipeline(const PipelineConfig& c, const std::string& out_dir,
                  const StageObserver& observer) {
  c.validate();
  const auto notify = [&](int stage, const char* status) {
    if (observer) observer(stage, status);
  };
  fs::create_directories(fs::path(out_dir) / "checkpoints");
  const auto ckpt = [&](const std::string& name) {
    return path_in(out_dir, "checkpoints/" + name);
  };
  io::write_file_atomic(path_in(out_dir, "config.json"), config_to_json(c));

  const World w = make_world(c);
  if (c.write_datasets) {
    write_atomic(path_in(out_dir, "datasets.tsv"), [&](std::ostream& os) {
      for (const auto& t : w.tasks) write_dataset_records(os, t);
    });
  }

  ordered_json metrics;
  metrics["method"] = method_name(c.method);
  metrics["seed"] = c.seed;
  metrics["labeled_fraction"] = c.labeled_fraction;
  metrics["num_tasks"] = c.num_tasks();

  // Stage 1.
  RecognizerModel asr;
  SynthesizerModel synth;
  Stage1Report s1;
  if (c.stages[0]) {
    notify(1, "running");
    Stage1Result r = run_stage1(c, w);
    save_model_atomic(ckpt("stage1_asr.ckpt"), r.asr);
    save_synth_atomic(ckpt("stage1_synth.ckpt"), r.synth);
    write_curve(path_in(out_dir, "stage1_curves.csv"), r.report.curve);
    asr = std::move(r.asr);
    synth = std::move(r.synth);
    s1 = std::move(r.report);
    notify(1, "done");
  } else {
    notify(1, "skipped");
    if (!fs::exists(ckpt("stage1_asr.ckpt")) || !fs::exists(ckpt("stage1_synth.ckpt"))) {
      throw ConfigError("stage 1 disabled but no stage-1 checkpoints in " + out_dir);
    }
    asr = load_model(ckpt("stage1_asr.ckpt"));
    synth = load_synthesizer(ckpt("stage1_synth.ckpt"));
    if (!(asr.shape == c.shape())) {
      throw ConfigError("stage-1 checkpoint shape does not match the config");
    }
    s1.labeled = w.base_split.labeled.size();
    s1.unlabeled = w.base_split.unlabeled.size();
    s1.dev_cer = w.tasks[0].dev.empty() ? 0.0 : corpus_cer(asr, w.tasks[0].dev);
    s1.test_cer = corpus_cer(asr, w.tasks[0].test);
    for (std::size_t i = 1; i < w.tasks.size(); ++i) {
      s1.cross_test_cer.push_back(corpus_cer(asr, w.tasks[i].test));
    }
  }
  metrics["stage1_labeled"] = s1.labeled;
  metrics["stage1_unlabeled"] = s1.unlabeled;
  metrics["stage1_dev_cer"] = s1.dev_cer;
  metrics["stage1_test_cer"] = s1.test_cer;
  for (std::size_t i = 0; i < s1.cross_test_cer.size(); ++i) {
    metrics["stage1_cross_test_cer_task_" + std::to_string(i + 1)] = s1.cross_test_cer[i];
  }

  // Stage 2.
  if (c.stages[1]) {
    notify(2, "running");
    Stage2Result r = run_stage2(c, w, asr, synth);
    save_model_atomic(ckpt("stage2_asr.ckpt"), r.asr);
    save_synth_atomic(ckpt("stage2_synth.ckpt"), r.synth);
    write_curve(path_in(out_dir, "stage2_curves.csv"), r.report.curve);
    metrics["stage2_dev_cer_before"] = r.report.dev_cer_before;
    metrics["stage2_dev_cer_after"] = r.report.dev_cer_after;
    std::size_t accepted = 0;
    for (const auto& round : r.report.rounds) accepted += round.accepted;
    metrics["stage2_rounds"] = r.report.rounds.size();
    metrics["stage2_pseudo_labels_accepted"] = accepted;
    asr = std::move(r.asr);
    synth = std::move(r.synth);
    notify(2, "done");
  } else {
    notify(2, "skipped");
    if (!c.stages[0] && c.stages[2] && fs::exists(ckpt("stage2_asr.ckpt")) &&
        fs::exists(ckpt("stage2_synth.ckpt"))) {
      asr = load_model(ckpt("stage2_asr.ckpt"));
      synth = load_synthesizer(ckpt("stage2_synth.ckpt"));
    }
  }

  // Stage 3.
  if (c.stages[2]) {
    notify(3, "running");
    Stage3Result r = run_stage3(c, w, asr, synth);
    for (std::size_t i = 0; i < r.snapshots.size(); ++i) {
      save_model_atomic(ckpt("phase_" + std::to_string(i) + ".ckpt"), r.snapshots[i]);
      save_model_atomic(ckpt("reference_phase_" + std::to_string(i) + ".ckpt"),
                        r.reference_snapshots[i]);
    }
    write_matrix(path_in(out_dir, kErrorMatrixFile), r.errors);
    write_matrix(path_in(out_dir, "reference_error_matrix.csv"), r.reference_errors);
    write_curve(path_in(out_dir, kCurvesFile), r.curve);
    write_curve(path_in(out_dir, "reference_curves.csv"), r.reference_curve);
    if (!r.memories.empty()) {
      write_atomic(path_in(out_dir, "memories.tsv"),
                   [&](std::ostream& os) { write_memory_records(os, r.memories); });
    }
    if (c.stage3.trace_projection) {
      write_atomic(path_in(out_dir, "projection_trace.csv"),
                   [&](std::ostream& os) { write_projection_trace_csv(os, r.trace); });
    }
    metrics["avg"] = r.metrics.avg;
    metrics["bwt"] = r.metrics.bwt;
    metrics["fwt"] = r.metrics.fwt;
    const std::size_t last = r.errors.num_phases() - 1;
    for (std::size_t j = 0; j < r.errors.num_tasks(); ++j) {
      metrics["final_cer_task_" + std::to_string(j)] = r.errors.at(last, j);
    }
    for (std::size_t j = 0; j < r.reference_errors.num_tasks(); ++j) {
      metrics["reference_final_cer_task_" + std::to_string(j)] =
          r.reference_errors.at(last, j);
    }
    std::vector<double> ft(r.reference_errors.num_tasks(), 0.0);
    for (std::size_t j = 1; j < ft.size(); ++j) ft[j] = r.reference_errors.at(j, j);
    const CLMetrics ref = compute_metrics(r.reference_errors, ft);
    metrics["reference_avg"] = ref.avg;
    metrics["reference_bwt"] = ref.bwt;
    notify(3, "done");
  } else {
    notify(3, "skipped");
  }

  io::write_file_atomic(path_in(out_dir, kMetricsFile), metrics.dump(2) + "\n");
}

}  // namespace chaingem
