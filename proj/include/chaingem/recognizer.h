// chaingem/recognizer.h

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

#ifndef CHAINGEM_RECOGNIZER_H_
#define CHAINGEM_RECOGNIZER_H_

// The recognizer is a per-frame classifier: one tanh hidden layer followed by
// a softmax over the alphabet. Parameters live in one flat vector laid out as
//   W1 (input x hidden, row-major) | b1 (hidden) | W2 (hidden x output) | b2
// so that episodic-memory gradients and projections work on plain vectors.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>

#include "chaingem/common.h"
#include "chaingem/curve.h"
#include "chaingem/utterance.h"

namespace chaingem {

struct RecognizerShape {
  int input_dim = 16;
  int hidden_dim = 16;
  int output_dim = 10;

  std::size_t num_params() const;
  void validate() const;
  bool operator==(const RecognizerShape&) const = default;
};

struct RecognizerModel {
  RecognizerShape shape;
  Vector theta;

  std::size_t num_params() const { return static_cast<std::size_t>(theta.size()); }
};

/// Gradient with respect to a RecognizerModel's theta.
struct GradientVector {
  Vector values;

  GradientVector() = default;
  explicit GradientVector(Vector v) : values(std::move(v)) {}
  Eigen::Index size() const { return values.size(); }
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-9;

  void validate() const;
};

struct OptimizerState {
  AdamConfig config;
  long step_count = 0;
  Vector first_moment;
  Vector second_moment;

  static OptimizerState fresh(const AdamConfig& config, std::size_t num_params);
};

struct TrainConfig {
  AdamConfig adam;
  std::size_t batch_size = 16;
  /// Probability mass spread uniformly over the non-target symbols.
  double smoothing = 0.1;
  /// Evaluate every this many steps plus once at the end; 0 evaluates after
  /// every epoch.
  long eval_every = 0;

  void validate() const;
};

struct LossReport {
  double loss = 0.0;
  double frame_accuracy = 0.0;
};

RecognizerModel init_model(const RecognizerShape& shape, std::uint64_t seed);

/// Per-frame class probabilities, one row per input frame.
Matrix forward(const RecognizerModel& model, const Eigen::Ref<const Matrix>& x);

/// Mean cross-entropy of probability rows against label-smoothed targets.
LossReport cross_entropy(const Eigen::Ref<const Matrix>& probs,
                         std::span<const int> targets, double smoothing);

LossReport loss(const RecognizerModel& model, const Utterance& utt,
                double smoothing);
/// Frame-weighted loss over a set of utterances.
LossReport loss(const RecognizerModel& model, std::span<const Utterance> utts,
                double smoothing);

/// Exact gradient of the mean per-frame loss over all frames of the batch.
GradientVector gradient(const RecognizerModel& model,
                        std::span<const Utterance> batch, double smoothing);
GradientVector gradient(const RecognizerModel& model,
                        std::span<const Utterance* const> batch,
                        double smoothing);
/// Same, on pre-stacked frames; optionally reports the loss at model.
GradientVector gradient_frames(const RecognizerModel& model,
                               const Eigen::Ref<const Matrix>& frames,
                               std::span<const int> targets, double smoothing,
                               LossReport* report = nullptr);

struct AdamResult {
  OptimizerState state;
  RecognizerModel model;
};

/// Bias-corrected Adam update. Throws DivergenceError on a non-finite gradient.
AdamResult adam_step(OptimizerState state, RecognizerModel model,
                     const GradientVector& g);

/// theta <- theta - delta * g.
RecognizerModel sgd_step(RecognizerModel model, const GradientVector& g,
                         double delta);

/// Per-frame argmax followed by repeat collapse.
LabelSeq decode(const RecognizerModel& model, const Eigen::Ref<const Matrix>& x);
LabelSeq decode_probs(const Eigen::Ref<const Matrix>& probs);

struct TrainResult {
  RecognizerModel model;
  Curve curve;
  long steps = 0;
};

/// Adds a regularizer's gradient to the data gradient at theta.
using PenaltyGradient = std::function<void(const Vector& theta, Vector* grad)>;

/// Mini-batch Adam training. The batch order is drawn from seed; after each
/// epoch every eval target is scored and appended to the curve.
TrainResult train_supervised(const RecognizerModel& model,
                             std::span<const Utterance> data, int epochs,
                             const TrainConfig& config, std::uint64_t seed,
                             std::span<const EvalTarget> eval = {},
                             const PenaltyGradient& penalty = {});

/// Appends one row per target at the given step.
void evaluate_into(const RecognizerModel& model,
                   std::span<const EvalTarget> targets, long step,
                   double smoothing, Curve* curve);

// Checkpoints: 8-byte magic, int32 input/hidden/output dims, uint64 |theta|,
// then |theta| little-endian float64 values.
void save_model(std::ostream& os, const RecognizerModel& model);
RecognizerModel load_model(std::istream& is);
void save_model(const std::string& path, const RecognizerModel& model);
RecognizerModel load_model(const std::string& path);

}  // namespace chaingem

#endif  // CHAINGEM_RECOGNIZER_H_
