// src/baselines.cc

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

#include "chaingem/baselines.h"

#include <cmath>

namespace chaingem {

TrainResult fine_tune(const RecognizerModel& model, std::span<const Utterance> new_task_train,
                      int epochs, const TrainConfig& config, std::uint64_t seed,
                      std::span<const EvalTarget> eval) {
  return train_supervised(model, new_task_train, epochs, config, seed, eval);
}

TrainResult multitask_train(const RecognizerShape& shape,
                            const std::vector<std::span<const Utterance>>& tasks, int epochs,
                            const TrainConfig& config, std::uint64_t seed,
                            std::span<const EvalTarget> eval) {
  if (tasks.empty()) throw Error("multitask training needs at least one task");
  UtteranceList pooled;
  for (const auto& t : tasks) pooled.insert(pooled.end(), t.begin(), t.end());
  // Batches are reshuffled every epoch, so pooling order does not matter.
  return train_supervised(init_model(shape, seed), pooled, epochs, config, seed, eval);
}

EwcState ewc_prepare(const RecognizerModel& model, std::span<const Utterance> data,
                     double smoothing, double lambda) {
  if (data.empty()) throw Error("EWC needs base-task data to estimate the Fisher");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("EWC lambda must be >= 0");
  EwcState s;
  s.anchor_theta = model.theta;
  s.fisher_diag = Vector::Zero(model.theta.size());
  s.lambda = lambda;
  for (const auto& u : data) {
    const GradientVector g = gradient(model, std::span<const Utterance>(&u, 1), smoothing);
    s.fisher_diag += g.values.cwiseAbs2();
  }
  s.fisher_diag /= static_cast<double>(data.size());
  return s;
}

namespace {

void check_state(const EwcState& state, const Vector& theta) {
  if (state.anchor_theta.size() != theta.size() || state.fisher_diag.size() != theta.size()) {
    throw Error("EWC state does not match model size");
  }
}

}  // namespace

double ewc_penalty(const EwcState& state, const Vector& theta) {
  check_state(state, theta);
  return 0.5 * state.lambda *
         (state.fisher_diag.array() * (theta - state.anchor_theta).array().square()).sum();
}

Vector ewc_penalty_gradient(const EwcState& state, const Vector& theta) {
  check_state(state, theta);
  return state.lambda * (state.fisher_diag.array() * (theta - state.anchor_theta).array()).matrix();
}

TrainResult ewc_train(const RecognizerModel& model, const EwcState& state,
                      std::span<const Utterance> new_task_train, int epochs,
                      const TrainConfig& config, std::uint64_t seed,
                      std::span<const EvalTarget> eval) {
  check_state(state, model.theta);
  if ((state.fisher_diag.array() < 0.0).any()) throw Error("Fisher diagonal must be >= 0");
  if (state.lambda == 0.0) return fine_tune(model, new_task_train, epochs, config, seed, eval);
  PenaltyGradient penalty = [&state](const Vector& theta, Vector* grad) {
    *grad += ewc_penalty_gradient(state, theta);
  };
  return train_supervised(model, new_task_train, epochs, config, seed, eval, penalty);
}

}  // namespace chaingem
