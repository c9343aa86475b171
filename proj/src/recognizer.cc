// src/recognizer.cc

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

#include "chaingem/recognizer.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <string>

#include "chaingem/metrics.h"
#include "io_util.h"

namespace chaingem {

namespace {

constexpr char kModelMagic[] = "CGASR001";

using ConstMap = Eigen::Map<const Matrix>;
using RowVec = Eigen::RowVectorXd;

struct Views {
  ConstMap w1, w2;
  Eigen::Map<const RowVec> b1, b2;

  explicit Views(const RecognizerModel& m)
      : w1(m.theta.data(), m.shape.input_dim, m.shape.hidden_dim),
        w2(m.theta.data() + offset_w2(m.shape), m.shape.hidden_dim,
           m.shape.output_dim),
        b1(m.theta.data() + offset_b1(m.shape), m.shape.hidden_dim),
        b2(m.theta.data() + offset_b2(m.shape), m.shape.output_dim) {}

  static Eigen::Index offset_b1(const RecognizerShape& s) {
    return Eigen::Index{s.input_dim} * s.hidden_dim;
  }
  static Eigen::Index offset_w2(const RecognizerShape& s) {
    return offset_b1(s) + s.hidden_dim;
  }
  static Eigen::Index offset_b2(const RecognizerShape& s) {
    return offset_w2(s) + Eigen::Index{s.hidden_dim} * s.output_dim;
  }
};

void check_model(const RecognizerModel& m) {
  m.shape.validate();
  if (m.num_params() != m.shape.num_params()) {
    throw Error("theta has " + std::to_string(m.num_params()) +
                " entries, shape needs " + std::to_string(m.shape.num_params()));
  }
}

void check_width(const RecognizerModel& m, Eigen::Index cols) {
  if (cols != m.shape.input_dim) {
    throw Error("frame width " + std::to_string(cols) + " does not match model input " +
                std::to_string(m.shape.input_dim));
  }
}

// Row-wise log-softmax of the logits.
Matrix log_softmax(const Matrix& z) {
  Matrix out = z;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const double mx = out.row(r).maxCoeff();
    out.row(r).array() -= mx;
    const double lse = std::log(out.row(r).array().exp().sum());
    out.row(r).array() -= lse;
  }
  return out;
}

struct Activations {
  Matrix hidden;
  Matrix log_probs;
};

Activations run_forward(const RecognizerModel& m, const Eigen::Ref<const Matrix>& x) {
  Views v(m);
  Activations a;
  a.hidden = ((x * v.w1).rowwise() + v.b1).array().tanh().matrix();
  Matrix logits = (a.hidden * v.w2).rowwise() + v.b2;
  a.log_probs = log_softmax(logits);
  return a;
}

int row_argmax(const Eigen::Ref<const Matrix>& m, Eigen::Index r) {
  Eigen::Index best = 0;
  m.row(r).maxCoeff(&best);
  return static_cast<int>(best);
}

void check_targets(std::span<const int> targets, Eigen::Index rows, int num_classes) {
  if (static_cast<Eigen::Index>(targets.size()) != rows) {
    throw Error("got " + std::to_string(targets.size()) + " targets for " +
                std::to_string(rows) + " frames");
  }
  for (int t : targets) {
    if (t < 0 || t >= num_classes) throw Error("target id out of range: " + std::to_string(t));
  }
}

void check_smoothing(double smoothing) {
  if (!(smoothing >= 0.0 && smoothing < 1.0)) {
    throw Error("smoothing must lie in [0, 1)");
  }
}

}  // namespace

std::size_t RecognizerShape::num_params() const {
  const auto d = static_cast<std::size_t>(input_dim);
  const auto h = static_cast<std::size_t>(hidden_dim);
  const auto v = static_cast<std::size_t>(output_dim);
  return d * h + h + h * v + v;
}

void RecognizerShape::validate() const {
  if (input_dim <= 0 || hidden_dim <= 0 || output_dim <= 0) {
    throw ConfigError("recognizer layers must be non-empty (got " +
                      std::to_string(input_dim) + ", " + std::to_string(hidden_dim) +
                      ", " + std::to_string(output_dim) + ")");
  }
  if (output_dim < 2) throw ConfigError("recognizer needs at least 2 output symbols");
}

void AdamConfig::validate() const {
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw ConfigError("Adam epsilon must be positive");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning rate must be positive");
  }
}

OptimizerState OptimizerState::fresh(const AdamConfig& config, std::size_t num_params) {
  config.validate();
  OptimizerState s;
  s.config = config;
  s.first_moment = Vector::Zero(static_cast<Eigen::Index>(num_params));
  s.second_moment = Vector::Zero(static_cast<Eigen::Index>(num_params));
  return s;
}

void TrainConfig::validate() const {
  adam.validate();
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  check_smoothing(smoothing);
  if (eval_every < 0) throw ConfigError("eval_every must be non-negative");
}

RecognizerModel init_model(const RecognizerShape& shape, std::uint64_t seed) {
  shape.validate();
  RecognizerModel m;
  m.shape = shape;
  m.theta = Vector::Zero(static_cast<Eigen::Index>(shape.num_params()));
  Rng rng(derive_seed(seed, "recognizer-init"));
  auto fill = [&](Eigen::Index offset, int fan_in, int fan_out) {
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> u(-a, a);
    for (Eigen::Index i = 0; i < Eigen::Index{fan_in} * fan_out; ++i) {
      m.theta[offset + i] = u(rng);
    }
  };
  fill(0, shape.input_dim, shape.hidden_dim);
  fill(Views::offset_w2(shape), shape.hidden_dim, shape.output_dim);
  return m;
}

Matrix forward(const RecognizerModel& model, const Eigen::Ref<const Matrix>& x) {
  check_model(model);
  check_width(model, x.cols());
  return run_forward(model, x).log_probs.array().exp().matrix();
}

LossReport cross_entropy(const Eigen::Ref<const Matrix>& probs,
                         std::span<const int> targets, double smoothing) {
  check_smoothing(smoothing);
  const auto v = static_cast<int>(probs.cols());
  check_targets(targets, probs.rows(), v);
  if (probs.rows() == 0) throw Error("cross entropy over zero frames");
  const double off = smoothing / (v - 1);
  double total = 0.0;
  std::size_t correct = 0;
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    const int t = targets[static_cast<std::size_t>(r)];
    for (int c = 0; c < v; ++c) {
      const double w = c == t ? 1.0 - smoothing : off;
      if (w > 0.0) total -= w * std::log(probs(r, c));
    }
    if (row_argmax(probs, r) == t) ++correct;
  }
  const auto n = static_cast<double>(probs.rows());
  return {total / n, static_cast<double>(correct) / n};
}

GradientVector gradient_frames(const RecognizerModel& model,
                               const Eigen::Ref<const Matrix>& frames,
                               std::span<const int> targets, double smoothing,
                               LossReport* report) {
  check_model(model);
  check_width(model, frames.cols());
  check_smoothing(smoothing);
  const int v = model.shape.output_dim;
  check_targets(targets, frames.rows(), v);
  if (frames.rows() == 0) throw Error("gradient over an empty batch");

  const auto n = static_cast<double>(frames.rows());
  Views w(model);
  Activations a = run_forward(model, frames);
  const double off = smoothing / (v - 1);

  // d(loss)/d(logits) = (p - target) / n for each frame.
  Matrix dz = a.log_probs.array().exp().matrix();
  double total = 0.0;
  std::size_t correct = 0;
  for (Eigen::Index r = 0; r < dz.rows(); ++r) {
    const int t = targets[static_cast<std::size_t>(r)];
    if (report != nullptr) {
      for (int c = 0; c < v; ++c) {
        const double wt = c == t ? 1.0 - smoothing : off;
        if (wt > 0.0) total -= wt * a.log_probs(r, c);
      }
      if (row_argmax(a.log_probs, r) == t) ++correct;
    }
    dz.row(r).array() -= off;
    dz(r, t) -= 1.0 - smoothing - off;
  }
  dz /= n;
  if (report != nullptr) *report = {total / n, static_cast<double>(correct) / n};

  GradientVector g(Vector::Zero(model.theta.size()));
  const RecognizerShape& s = model.shape;
  Eigen::Map<Matrix> gw1(g.values.data(), s.input_dim, s.hidden_dim);
  Eigen::Map<RowVec> gb1(g.values.data() + Views::offset_b1(s), s.hidden_dim);
  Eigen::Map<Matrix> gw2(g.values.data() + Views::offset_w2(s), s.hidden_dim,
                         s.output_dim);
  Eigen::Map<RowVec> gb2(g.values.data() + Views::offset_b2(s), s.output_dim);

  gw2.noalias() = a.hidden.transpose() * dz;
  gb2 = dz.colwise().sum();
  Matrix da = (dz * w.w2.transpose()).array() * (1.0 - a.hidden.array().square());
  gw1.noalias() = frames.transpose() * da;
  gb1 = da.colwise().sum();
  return g;
}

LossReport loss(const RecognizerModel& model, const Utterance& utt, double smoothing) {
  return loss(model, std::span<const Utterance>(&utt, 1), smoothing);
}

LossReport loss(const RecognizerModel& model, std::span<const Utterance> utts,
                double smoothing) {
  check_model(model);
  Matrix frames;
  std::vector<int> targets;
  stack_frames(utts, &frames, &targets);
  check_width(model, frames.cols());
  check_smoothing(smoothing);
  check_targets(targets, frames.rows(), model.shape.output_dim);
  if (frames.rows() == 0) throw Error("loss over zero frames");
  Matrix lp = run_forward(model, frames).log_probs;
  const int v = model.shape.output_dim;
  const double off = smoothing / (v - 1);
  double total = 0.0;
  std::size_t correct = 0;
  for (Eigen::Index r = 0; r < lp.rows(); ++r) {
    const int t = targets[static_cast<std::size_t>(r)];
    for (int c = 0; c < v; ++c) {
      const double w = c == t ? 1.0 - smoothing : off;
      if (w > 0.0) total -= w * lp(r, c);
    }
    if (row_argmax(lp, r) == t) ++correct;
  }
  const auto n = static_cast<double>(lp.rows());
  return {total / n, static_cast<double>(correct) / n};
}

GradientVector gradient(const RecognizerModel& model, std::span<const Utterance> batch,
                        double smoothing) {
  if (batch.empty()) throw Error("gradient over an empty batch");
  Matrix frames;
  std::vector<int> targets;
  stack_frames(batch, &frames, &targets);
  return gradient_frames(model, frames, targets, smoothing);
}

GradientVector gradient(const RecognizerModel& model,
                        std::span<const Utterance* const> batch, double smoothing) {
  if (batch.empty()) throw Error("gradient over an empty batch");
  Matrix frames;
  std::vector<int> targets;
  stack_frames(batch, &frames, &targets);
  return gradient_frames(model, frames, targets, smoothing);
}

AdamResult adam_step(OptimizerState state, RecognizerModel model, const GradientVector& g) {
  check_model(model);
  if (g.size() != model.theta.size() || state.first_moment.size() != model.theta.size() ||
      state.second_moment.size() != model.theta.size()) {
    throw Error("Adam state, model and gradient sizes disagree");
  }
  if (!g.values.allFinite()) throw DivergenceError("non-finite gradient in Adam step");
  const AdamConfig& c = state.config;
  state.step_count += 1;
  state.first_moment = c.beta1 * state.first_moment + (1.0 - c.beta1) * g.values;
  state.second_moment =
      c.beta2 * state.second_moment + (1.0 - c.beta2) * g.values.cwiseAbs2();
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  model.theta.array() -= c.learning_rate * (state.first_moment.array() / bc1) /
                         ((state.second_moment.array() / bc2).sqrt() + c.epsilon);
  return {std::move(state), std::move(model)};
}

RecognizerModel sgd_step(RecognizerModel model, const GradientVector& g, double delta) {
  if (g.size() != model.theta.size()) throw Error("gradient size does not match model");
  if (!std::isfinite(delta) || !g.values.allFinite() || !model.theta.allFinite()) {
    throw DivergenceError("non-finite input to SGD step");
  }
  model.theta -= delta * g.values;
  return model;
}

LabelSeq decode_probs(const Eigen::Ref<const Matrix>& probs) {
  std::vector<int> frames(static_cast<std::size_t>(probs.rows()));
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    frames[static_cast<std::size_t>(r)] = row_argmax(probs, r);
  }
  return collapse_repeats(frames);
}

LabelSeq decode(const RecognizerModel& model, const Eigen::Ref<const Matrix>& x) {
  check_model(model);
  check_width(model, x.cols());
  // argmax of log-probabilities equals argmax of probabilities.
  return decode_probs(run_forward(model, x).log_probs);
}

void evaluate_into(const RecognizerModel& model, std::span<const EvalTarget> targets,
                   long step, double smoothing, Curve* curve) {
  for (const auto& t : targets) {
    if (t.data.empty()) continue;
    CurveRow row;
    row.step = step;
    row.task_id = t.task_id;
    row.split = t.split;
    row.cer = corpus_cer(model, t.data);
    row.loss = loss(model, t.data, smoothing).loss;
    curve->push_back(std::move(row));
  }
}

TrainResult train_supervised(const RecognizerModel& model, std::span<const Utterance> data,
                             int epochs, const TrainConfig& config, std::uint64_t seed,
                             std::span<const EvalTarget> eval,
                             const PenaltyGradient& penalty) {
  check_model(model);
  config.validate();
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (data.empty()) throw Error("supervised training needs data");

  TrainResult out{model, {}, 0};
  if (epochs == 0) return out;

  OptimizerState state = OptimizerState::fresh(config.adam, model.num_params());
  Rng rng(derive_seed(seed, "batch-order"));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<const Utterance*> batch;
  Matrix frames;
  std::vector<int> targets;

  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(&data[order[i]]);
      stack_frames(std::span<const Utterance* const>(batch), &frames, &targets);
      LossReport rep;
      GradientVector g =
          gradient_frames(out.model, frames, targets, config.smoothing, &rep);
      if (!std::isfinite(rep.loss)) {
        throw DivergenceError("non-finite training loss at step " +
                              std::to_string(out.steps));
      }
      if (penalty) penalty(out.model.theta, &g.values);
      AdamResult r = adam_step(std::move(state), std::move(out.model), g);
      state = std::move(r.state);
      out.model = std::move(r.model);
      ++out.steps;
      if (config.eval_every > 0 && out.steps % config.eval_every == 0) {
        evaluate_into(out.model, eval, out.steps, config.smoothing, &out.curve);
      }
    }
    if (!out.model.theta.allFinite()) throw DivergenceError("parameters became non-finite");
    const bool last = epoch + 1 == epochs;
    if (config.eval_every == 0 || (last && out.steps % config.eval_every != 0)) {
      evaluate_into(out.model, eval, out.steps, config.smoothing, &out.curve);
    }
  }
  return out;
}

void save_model(std::ostream& os, const RecognizerModel& model) {
  check_model(model);
  os.write(kModelMagic, 8);
  io::write_le<std::int32_t>(os, model.shape.input_dim);
  io::write_le<std::int32_t>(os, model.shape.hidden_dim);
  io::write_le<std::int32_t>(os, model.shape.output_dim);
  io::write_le<std::uint64_t>(os, model.num_params());
  for (Eigen::Index i = 0; i < model.theta.size(); ++i) io::write_le<double>(os, model.theta[i]);
  if (!os) throw Error("failed writing recognizer checkpoint");
}

RecognizerModel load_model(std::istream& is) {
  io::expect_magic(is, std::string_view(kModelMagic, 8));
  RecognizerModel m;
  m.shape.input_dim = io::read_le<std::int32_t>(is);
  m.shape.hidden_dim = io::read_le<std::int32_t>(is);
  m.shape.output_dim = io::read_le<std::int32_t>(is);
  m.shape.validate();
  const auto n = io::read_le<std::uint64_t>(is);
  if (n != m.shape.num_params()) throw Error("checkpoint parameter count disagrees with shape");
  m.theta.resize(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < m.theta.size(); ++i) m.theta[i] = io::read_le<double>(is);
  return m;
}

void save_model(const std::string& path, const RecognizerModel& model) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open " + path);
  save_model(os, model);
}

RecognizerModel load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path);
  return load_model(is);
}

}  // namespace chaingem
