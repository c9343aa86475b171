// chaingem/baselines.h

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

#ifndef CHAINGEM_BASELINES_H_
#define CHAINGEM_BASELINES_H_

#include <cstdint>
#include <span>
#include <vector>

#include "chaingem/recognizer.h"
#include "chaingem/utterance.h"

namespace chaingem {

/// Plain supervised training on the new task only.
TrainResult fine_tune(const RecognizerModel& model, std::span<const Utterance> new_task_train,
                      int epochs, const TrainConfig& config, std::uint64_t seed,
                      std::span<const EvalTarget> eval = {});

/// Fresh model (init seeded by `seed`) trained on the union of all task sets.
TrainResult multitask_train(const RecognizerShape& shape,
                            const std::vector<std::span<const Utterance>>& tasks, int epochs,
                            const TrainConfig& config, std::uint64_t seed,
                            std::span<const EvalTarget> eval = {});

// Elastic weight consolidation with a diagonal empirical Fisher.
struct EwcState {
  Vector anchor_theta;
  Vector fisher_diag;
  double lambda = 1e4;
};

/// Anchors at the model's theta; F is the mean over utterances of the squared
/// per-utterance loss gradient.
EwcState ewc_prepare(const RecognizerModel& model, std::span<const Utterance> data,
                     double smoothing, double lambda = 1e4);

/// (lambda / 2) * sum_i F_i (theta_i - anchor_i)^2
double ewc_penalty(const EwcState& state, const Vector& theta);
/// lambda * F .* (theta - anchor)
Vector ewc_penalty_gradient(const EwcState& state, const Vector& theta);

/// Fine-tuning with the EWC penalty gradient added to every data gradient.
/// With lambda == 0 this is exactly fine_tune.
TrainResult ewc_train(const RecognizerModel& model, const EwcState& state,
                      std::span<const Utterance> new_task_train, int epochs,
                      const TrainConfig& config, std::uint64_t seed,
                      std::span<const EvalTarget> eval = {});

}  // namespace chaingem

#endif  // CHAINGEM_BASELINES_H_
